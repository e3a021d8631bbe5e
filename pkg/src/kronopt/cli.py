"""Command-line entry point.

Verbs: train, sweep, cost-report, rank1-profile, prune, verify-lemmas.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import analysis, costs, linalg
from .config import ConfigError, load_config
from .harness import SWEEP_AXES, run_experiment, sweep
from .linalg import SingularMatrix
from .net import backward, forward
from .prune import greedy_prune, prune_and_measure, save_mask
from .training import build_dataset, run_training


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="RNG seed (mandatory here or in the config)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--optimizer", help="override the configured optimizer tag")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        dest="overrides",
        help="override any config key",
    )
    p.add_argument("--timing", action="store_true", help="include wall-clock columns in CSVs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kronopt")
    sub = parser.add_subparsers(dest="verb", required=True)

    for verb in ("train", "rank1-profile"):
        _add_common(sub.add_parser(verb))

    p = sub.add_parser("sweep")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated axis values")

    p = sub.add_parser("cost-report")
    _add_common(p)
    p.add_argument("--d", type=int, default=1024)
    p.add_argument("--b", type=int, default=32)
    p.add_argument("--measured", action="store_true", help="also run a short instrumented run")

    p = sub.add_parser("prune")
    _add_common(p)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--k", type=int, default=1, help="units to remove")
    p.add_argument("--tile", help="ROWSxCOLS for block mode, e.g. 2x2")

    p = sub.add_parser("verify-lemmas")
    _add_common(p)
    p.add_argument("--steps", type=int, default=2000, help="chain length for the PD check")
    return parser


def _config(args) -> "ExperimentConfig":
    return load_config(args.config, args.overrides, seed=args.seed, optimizer=args.optimizer)


def _cmd_train(args) -> int:
    cfg = _config(args)
    result = run_experiment(cfg, args.out, include_wall=args.timing)
    print(f"final loss {result.losses[-1]:.6g} after {cfg.iterations} iterations")
    print(f"artifacts in {args.out}")
    return 0


def _cmd_rank1_profile(args) -> int:
    cfg = _config(args)
    if cfg.rank1_every == 0:
        cfg.rank1_every = max(1, cfg.iterations // 10)
    result = run_experiment(cfg, args.out, include_wall=args.timing)
    print(f"{len(result.rank1_records)} rank-1 error records -> {args.out}/rank1.csv")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    rows = sweep(cfg, args.axis, values, args.out, include_wall=args.timing)
    for row in rows:
        print(row)
    return 0


def _cmd_cost_report(args) -> int:
    rows = []
    for tag in costs.OPTIMIZERS:
        rep = costs.analytic_cost(tag, args.d, args.b, half_precision=tag.startswith("mkor"))
        rows.append(rep)
        print(
            f"{tag:7s} factor_flops={rep.flops_factor_update:.3g} "
            f"comm_elements={rep.comm_elements:.3g} comm_bytes={rep.comm_bytes:.3g} "
            f"memory_elements={rep.memory_elements:.3g}"
        )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "analytic_cost.json"), "w") as fh:
        json.dump([rep.__dict__ for rep in rows], fh, sort_keys=True, indent=2)
        fh.write("\n")
    if args.measured:
        cfg = _config(args)
        result = run_training(cfg)
        rep = costs.measured_cost(result.trace)
        print(
            f"measured {rep.optimizer}: factor={rep.flops_factor_update:.4g} "
            f"inversion={rep.flops_inversion:.4g} precondition={rep.flops_precondition:.4g} "
            f"per iteration"
        )
    return 0


def _cmd_prune(args) -> int:
    cfg = _config(args)
    if cfg.optimizer not in ("mkor", "mkor-h"):
        raise ConfigError("prune reuses the rank-1 optimizer's factors; set optimizer=mkor")
    net, states = _train_with_factors(cfg)
    layer = args.layer
    if not 0 <= layer < len(net.layers):
        raise ConfigError(f"--layer {layer} out of range")
    ds = build_dataset(cfg)
    x, y = ds.x, ds.y
    out, trace = forward(net, x)
    _, caps = backward(net, trace, y, cfg.loss)
    # score with the factors themselves: re-invert the stored inverses
    left = linalg.direct_inverse(states[layer].l_inv)
    right = linalg.direct_inverse(states[layer].r_inv)
    tile = None
    if args.tile:
        tr, tc = args.tile.lower().split("x")
        tile = (int(tr), int(tc))
    mask = greedy_prune(net.weights[layer], caps[layer].w_grad, left, right, args.k, tile=tile)
    true_delta, predicted = prune_and_measure(net, x, y, cfg.loss, layer, mask, left, right)
    os.makedirs(args.out, exist_ok=True)
    save_mask(mask, os.path.join(args.out, f"layer{layer}.mask"))
    report = {
        "layer": layer,
        "k": args.k,
        "tile": list(tile) if tile else None,
        "pruned": int(np.count_nonzero(~mask.keep)),
        "true_loss_delta": true_delta,
        "predicted_loss_delta": predicted,
    }
    with open(os.path.join(args.out, "prune_report.json"), "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(json.dumps(report, sort_keys=True))
    return 0


def _train_with_factors(cfg):
    """Single-worker training that keeps the factor states around (RunResult
    does not carry them; this path is the pruning entry point)."""
    from .data import batch_slice, shard_dataset
    from .net import init_network
    from .optim import FactorState, MkorConfig, mkor_step

    shards = shard_dataset(build_dataset(cfg), 1, cfg.seed)
    rng = linalg.make_rng(cfg.seed)
    specs = cfg.layer_specs()
    net = init_network(specs, rng)
    states = [FactorState.identity_init(s.out_dim, s.in_dim) for s in specs]
    mcfg = MkorConfig(
        gamma=cfg.gamma, zeta=cfg.zeta, epsilon_norm=cfg.epsilon_norm,
        inversion_period=cfg.inversion_period, lr=cfg.lr,
        half_precision_comm=cfg.half_precision_comm,
    )
    for t in range(1, cfg.iterations + 1):
        x, y = batch_slice(shards[0], t, cfg.batch)
        _, trace = forward(net, x)
        _, caps = backward(net, trace, y, cfg.loss)
        mkor_step(net, caps, states, mcfg)
    return net, states


def _cmd_verify_lemmas(args) -> int:
    steps = args.steps
    report: dict = {}
    ok = True
    for d in (4, 16, 64):
        chain = analysis.lemma1_chain(d, steps, seed=d)
        report[f"pd_chain_d{d}"] = chain
        print(f"PD chain d={d}: OK over {steps} steps")
    rng = linalg.make_rng(1)
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(2, 33))
        f = analysis.make_spd(rng, d)
        f_inv = linalg.direct_inverse(f)
        v = rng.standard_normal(d)
        gamma = 0.9
        from .optim import sm_update_exact

        got = sm_update_exact(f_inv, v, gamma)
        want = linalg.direct_inverse(0.9 * f + 0.1 * np.outer(v, v))
        err = float(np.max(np.abs(got - want))) / d
        worst = max(worst, err)
    report["exact_sm_max_err_per_dim"] = worst
    exact_ok = worst < 1e-9
    ok &= exact_ok
    print(f"exact SM vs direct inverse: max err/d = {worst:.3e} ({'OK' if exact_ok else 'FAIL'})")
    report["lemma3"] = analysis.lemma3_check(4, 5, zeta=0.7, trials=100, seed=2)
    print("Kronecker descent check: OK over 100 trials")
    q = analysis.quantization_error_report(16, 0.9, trials=100, seed=3)
    report["quantization"] = q
    q_ok = q["fitted_constant"] <= 16.0
    ok &= q_ok
    print(f"quantization constant C = {q['fitted_constant']:.3g} ({'OK' if q_ok else 'FAIL'})")
    report["sm_discrepancy"] = analysis.sm_discrepancy_report(16, 0.9, steps=200, seed=4)
    print(
        "printed-vs-exact update divergence after 200 steps: "
        f"{report['sm_discrepancy']['final_abs_difference']:.3g} (documented, not asserted)"
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "lemma_report.json"), "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2, default=float)
        fh.write("\n")
    return 0 if ok else 3


_COMMANDS = {
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "cost-report": _cmd_cost_report,
    "rank1-profile": _cmd_rank1_profile,
    "prune": _cmd_prune,
    "verify-lemmas": _cmd_verify_lemmas,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SingularMatrix, AssertionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
