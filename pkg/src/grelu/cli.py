"""Command-line entry point: ``grelu <subcommand> ...``.

Exit codes: 0 success, 1 runtime error, 2 training budget exhausted,
3 divergence, 4 a probe or verification did not pass, 64 usage error.
Errors are reported on stderr as a single ``ERROR: ...`` line.
"""
from __future__ import annotations

import argparse
import itertools
import os
import sys
from pathlib import Path

import numpy as np

from . import theory
from .checkpoint import load_gates, load_network, save_gates, save_network
from .convert import RESIDUAL_TOL, grelu_to_relu, verify_equivalence
from .data import check_separation, gen_ackley, load_csv, load_dataset, save_dataset
from .errors import DivergenceError, GReluError
from .linalg import spectral_norm
from .model import GReluNetwork, NetworkShape, ReluNetwork, compute_gates, init_network
from .ntk import kernel_csv, kernel_drift, ntk_kernel, ntk_ratio
from .train import TrainConfig, fmt, layer_gradients, train

EXIT_OK, EXIT_ERROR, EXIT_EXHAUSTED, EXIT_DIVERGED, EXIT_FAILED, EXIT_USAGE = 0, 1, 2, 3, 4, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"ERROR: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _default_seed() -> int:
    raw = os.environ.get("GRELU_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"GRELU_SEED must be an integer, got {raw!r}") from None


def _lr(value):
    if value == "theoretical":
        return value
    try:
        v = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a number or 'theoretical'") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("learning rate must be positive")
    return v


def _positive(value):
    v = int(value)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _nonneg(value):
    v = int(value)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _seeds(value):
    """``"5"`` means seeds 0..4; ``"3-7"`` and ``"1,4,9"`` are explicit."""
    if "," in value:
        return [int(v) for v in value.split(",") if v.strip()]
    if "-" in value:
        a, b = value.split("-", 1)
        return list(range(int(a), int(b) + 1))
    return list(range(int(value)))


def _read_data(path):
    if str(path).lower().endswith(".csv"):
        return load_csv(path)
    return load_dataset(path)


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(args):
    ds = gen_ackley(args.n, args.d, args.seed)
    save_dataset(ds, args.out)
    print(f"delta={fmt(check_separation(ds))} n={ds.n} d={ds.d_x} "
          f"label_scale={fmt(ds.label_scale)}")
    return EXIT_OK


def cmd_train(args):
    if args.arch == "relu" and args.out_gates:
        raise UsageError("--out-gates only applies to --arch grelu")
    ds = _read_data(args.data)
    shape = NetworkShape(ds.d_x, ds.d_y, args.width, args.depth)
    net = init_network(shape, args.seed)
    gates = None
    if args.arch == "relu":
        net = ReluNetwork.from_grelu(net)
    else:
        gates = compute_gates(net, ds.X)
    cfg = TrainConfig(eta=args.lr, max_iters=args.iters, target_loss=args.target_loss,
                      arch=args.arch, seed=args.seed, log_every=args.log_every,
                      deterministic_reduction=args.deterministic)
    code = EXIT_OK
    try:
        net, log = train(net, ds, cfg, gates=gates)
        if log.status == "exhausted":
            code = EXIT_EXHAUSTED
    except DivergenceError as exc:
        log, net, code = exc.log, exc.net, EXIT_DIVERGED
        print(f"ERROR: {exc}", file=sys.stderr)
    _write(args.log, log.to_csv(deterministic=args.deterministic))
    if args.out_net:
        save_network(net, args.out_net)
    if args.out_gates:
        save_gates(gates, args.out_gates)
    last = log.rows[-1]
    print(f"status={log.status} iter={last.iter} loss={fmt(last.loss)}", file=sys.stderr)
    return code


def _probe_one(which, net, gates, ds, args):
    rep = theory.TheoryReport()
    s = net.shape
    sel = set(which)
    if "eig" in sel:
        rep.extend(theory.eig_bounds_report(net, gates))
    if "cross" in sel:
        rep.extend(theory.cross_term_report(net, gates, ds))
    if "overlap" in sel:
        for i, j in itertools.combinations(range(ds.n), 2):
            ov, cos = theory.gate_overlap(net, ds.X[i], ds.X[j])
            for k, v in enumerate(ov):
                rep.add("gate_overlap", v, 1 / 3, v <= 1 / 3, k=k, i=i, j=j)
            for k, v in enumerate(theory.direct_gate_overlap(net, ds.X[i], ds.X[j])):
                rep.add("direct_gate_overlap", v, 1 / 3, v <= 1 / 3, k=k, i=i, j=j)
    if "znorm" in sel:
        rep.extend(theory.z_norm_report(net, gates, args.theta, trained=args.trained))
    if "decomp" in sel:
        eta = args.eta
        grads, _ = layer_gradients(net, gates, ds)
        nxt = net.with_weights([w - eta * g for w, g in zip(net.W, grads)])
        first = s.L > 6
        res = theory.decomposition_check(net, nxt, gates, ds, eta, first_order_only=first)
        bound = 1e-10 if not first else 10 * eta
        rep.add("decomposition_residual", res, bound, res <= bound)
    if "gradnorm" in sel:
        rep.extend(theory.grad_norm_bound_check(
            net, gates, ds, gamma_value=theory.gamma_hat(net, gates, ds)))
    if "initloss" in sel:
        rep.extend(theory.initial_loss_check(net, gates, ds))
    if "descent" in sel:
        if not args.log:
            raise UsageError("--which descent needs --log with a training log")
        from .train import TrainLog

        log = TrainLog.from_csv(args.log)
        eta = float(log.rows[0].eta)
        frac = theory.descent_rate_check(log, theory.alpha(s.m, s.d_x, s.d_y), s.L, eta)
        rep.add("descent_fraction", frac, args.quota, frac >= args.quota)
    return rep


PROBES = ("eig", "cross", "overlap", "znorm", "decomp", "descent", "gradnorm", "initloss")


def cmd_probe(args):
    ds = _read_data(args.data)
    which = [args.which] if args.which != "all" else [
        p for p in PROBES if p != "descent" or args.log]
    if args.net:
        net = load_network(args.net)
        if not isinstance(net, GReluNetwork):
            raise UsageError("probes need a GReLU checkpoint")
        gates = load_gates(args.gates) if args.gates else compute_gates(net, ds.X)
        rep = _probe_one(which, net, gates, ds, args)
        ok = rep.all_passed
    else:
        if args.gates:
            raise UsageError("--gates requires --net")
        if args.width is None or args.depth is None:
            raise UsageError("without --net, pass --width and --depth to probe fresh inits")
        rep = theory.TheoryReport()
        flags = []
        for seed in args.seeds:
            net = init_network(NetworkShape(ds.d_x, ds.d_y, args.width, args.depth), seed)
            r = _probe_one(which, net, compute_gates(net, ds.X), ds, args)
            flags.append(r.all_passed)
            rep.extend(r)
        frac = float(np.mean(flags)) if flags else 0.0
        ok = theory.seed_quota(flags, args.quota)
        rep.add("seed_quota", frac, args.quota, ok)
    _write(args.out, rep.to_csv())
    return EXIT_OK if ok else EXIT_FAILED


def cmd_convert(args):
    net = load_network(args.net)
    if not isinstance(net, GReluNetwork):
        raise UsageError("convert needs a GReLU checkpoint")
    ds = _read_data(args.data)
    gates = load_gates(args.gates) if args.gates else compute_gates(net, ds.X)
    relu = grelu_to_relu(net, gates, ds)
    save_network(relu, args.out)
    code = EXIT_OK
    if args.verify:
        eq = verify_equivalence(net, gates, relu, ds)
        rep = theory.TheoryReport()
        for k, v in enumerate(eq.layer_deviation):
            rep.add("layer_deviation", v, RESIDUAL_TOL, v < RESIDUAL_TOL, k=k)
        rep.add("output_deviation", eq.output_deviation, RESIDUAL_TOL,
                eq.output_deviation < RESIDUAL_TOL)
        rep.add("loss_gap", eq.loss_gap, 1e-9, eq.loss_gap < 1e-9)
        rep.add("negative_passthrough", eq.negative_passthrough, 1.0, True)
        _write(args.report, rep.to_csv())
        if not rep.all_passed:
            code = EXIT_FAILED
    return code


def cmd_ntk(args):
    net = load_network(args.net)
    if not isinstance(net, GReluNetwork):
        raise UsageError("ntk needs a GReLU checkpoint")
    ds = _read_data(args.data)
    gates = load_gates(args.gates) if args.gates else compute_gates(net, ds.X)
    s = net.shape
    head = f"p={args.p} n={ds.n} m={s.m} L={s.L}"
    if args.mode == "kernel":
        _write(args.out, kernel_csv(ntk_kernel(net, gates, ds.X, args.p), args.p, s.m, s.L))
        return EXIT_OK
    if not args.net_t:
        raise UsageError(f"--mode {args.mode} needs --net-t (the trained checkpoint)")
    net_t = load_network(args.net_t)
    if not isinstance(net_t, GReluNetwork) or net_t.shape != s:
        raise UsageError("--net-t must be a GReLU checkpoint of the same shape")
    if args.mode == "ratio":
        Wp = [a - b for a, b in zip(net_t.W, net.W)]
        # default xi: measured drift tau times depth
        xi = args.xi if args.xi is not None else s.L * max(spectral_norm(d) for d in Wp)
        r = ntk_ratio(net, Wp, gates, ds.X, args.p, xi=xi)
        text = f"# ntk-ratio {head} xi={fmt(xi)}\ni,ratio\n"
        text += "".join(f"{i},{fmt(v)}\n" for i, v in enumerate(r))
    else:
        d = kernel_drift(net, net_t, gates, ds.X, args.p)
        text = f"# ntk-drift {head}\ndrift\n{fmt(d)}\n"
    _write(args.out, text)
    return EXIT_OK


def cmd_sweep(args):
    from .sweep import SweepConfig, run_sweep, sweep_csv, sweep_svg

    cfg = SweepConfig.parse(Path(args.config).read_text())
    if args.print_config:
        sys.stdout.write(cfg.dump())
        return EXIT_OK
    results = run_sweep(cfg, jobs=args.jobs)
    _write(args.out or cfg.output_csv, sweep_csv(cfg, results))
    svg = args.svg or cfg.output_svg
    if svg:
        Path(svg).write_text(sweep_svg(cfg, results))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser(default_seed=0) -> argparse.ArgumentParser:
    p = _Parser(prog="grelu", description="Gated-ReLU network experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset (GRND file)")
    g.add_argument("--n", type=_positive, required=True)
    g.add_argument("--d", type=_positive, required=True)
    g.add_argument("--seed", type=int, default=default_seed)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="full-batch gradient descent")
    t.add_argument("--data", required=True)
    t.add_argument("--arch", choices=("grelu", "relu"), default="grelu")
    t.add_argument("--width", type=_positive, required=True)
    t.add_argument("--depth", type=_positive, required=True)
    t.add_argument("--lr", type=_lr, default="theoretical")
    t.add_argument("--iters", type=_nonneg, default=1000)
    t.add_argument("--target-loss", type=float, default=0.0)
    t.add_argument("--seed", type=int, default=default_seed)
    t.add_argument("--log", default="-", help="CSV log path ('-' for stdout)")
    t.add_argument("--log-every", type=_positive, default=1)
    t.add_argument("--out-net")
    t.add_argument("--out-gates")
    t.add_argument("--deterministic", action="store_true")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("probe", help="check measured quantities against theoretical bounds")
    pr.add_argument("--net")
    pr.add_argument("--gates")
    pr.add_argument("--data", required=True)
    pr.add_argument("--which", choices=PROBES + ("all",), default="all")
    pr.add_argument("--seeds", type=_seeds, default=[default_seed])
    pr.add_argument("--width", type=_positive)
    pr.add_argument("--depth", type=_positive)
    pr.add_argument("--quota", type=float, default=0.95)
    pr.add_argument("--theta", type=float, default=theory.DEFAULT_THETA)
    pr.add_argument("--trained", action="store_true")
    pr.add_argument("--eta", type=float, default=1e-3, help="step for the decomp probe")
    pr.add_argument("--log", help="training log for the descent probe")
    pr.add_argument("--out", default="-")
    pr.set_defaults(func=cmd_probe)

    c = sub.add_parser("convert", help="GReLU to equivalent ReLU network")
    c.add_argument("--net", required=True)
    c.add_argument("--gates")
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--verify", action="store_true")
    c.add_argument("--report", default="-")
    c.set_defaults(func=cmd_convert)

    k = sub.add_parser("ntk", help="neural tangent kernel quantities")
    k.add_argument("--net", required=True)
    k.add_argument("--net-t", help="trained checkpoint (ratio and drift modes)")
    k.add_argument("--gates")
    k.add_argument("--data", required=True)
    k.add_argument("--p", type=_positive, default=1)
    k.add_argument("--mode", choices=("kernel", "ratio", "drift"), default="kernel")
    k.add_argument("--xi", type=float)
    k.add_argument("--out", default="-")
    k.set_defaults(func=cmd_ntk)

    s = sub.add_parser("sweep", help="run a width/seed/architecture grid")
    s.add_argument("--config", required=True)
    s.add_argument("--print-config", action="store_true")
    s.add_argument("--jobs", type=_positive, default=1)
    s.add_argument("--out")
    s.add_argument("--svg")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = None
    try:
        parser = build_parser(_default_seed())
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    except UsageError as exc:
        if parser is not None:
            parser.print_usage(sys.stderr)
        print(f"ERROR: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GReluError, OSError, ValueError, IndexError) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
