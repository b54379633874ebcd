"""Command-line front end: ``picm <command> ...``.

Every command writes a CSV or binary artifact and prints a short summary.
Errors exit with the code of their family (see :mod:`picm.errors`); bad
arguments exit with 2 and unreadable files with 11.
"""

import argparse
import csv
import os
import sys

import numpy as np

from . import codec, controller
from .errors import PicmError
from .metrics import ece, reliability_table
from .oracle import SyntheticClassifier, cross_entropy_oracle, load_logits
from .priority import STRATEGIES, build_order
from .tensor import LatentGrid, load_grid, quantize, save_grid, synth_grid
from .tritplane import decompose

EXIT_USAGE = 2
EXIT_IO = 11


def _shape(text):
    parts = text.lower().replace("x", ",").split(",")
    if len(parts) != 3 or not all(p.strip().isdigit() and int(p) > 0 for p in parts):
        raise argparse.ArgumentTypeError(f"shape must be H,W,C with positive integers, got {text!r}")
    return tuple(int(p) for p in parts)


def _taus(text):
    try:
        taus = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad tau list {text!r}") from None
    if not taus or any(not 0.0 <= t <= 1.0 for t in taus):
        raise argparse.ArgumentTypeError("tau values must lie in [0, 1]")
    return taus


def _levels(text):
    if text == "planes":
        return "planes"
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--levels takes a count or 'planes'") from None
    if n < 1:
        raise argparse.ArgumentTypeError("--levels must be >= 1")
    return n


def _level_args(args):
    if args.levels == "planes":
        return 10**9, "planes"
    return args.levels, args.level_kind


def _classifier(args, shape):
    return SyntheticClassifier(int(np.prod(shape)), args.classes, seed=args.classifier_seed)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_stream(path):
    with open(path, "rb") as fh:
        return codec.ProgressiveBitstream.from_bytes(fh.read())


def _label(clf, grid):
    """Ground truth of the synthetic task: the prediction on the full decode."""
    return clf.label_for(codec.clean_latent(grid))


def cmd_gen(args):
    paths = []
    if args.count == 1:
        paths.append((args.seed, args.output))
    else:
        os.makedirs(args.output, exist_ok=True)
        paths = [(args.seed + i, os.path.join(args.output, f"grid_{i:04d}.picl")) for i in range(args.count)]
    for seed, path in paths:
        save_grid(synth_grid(seed, *args.shape, args.scale_law), path)
    h, w, c = args.shape
    print(f"wrote {len(paths)} grid(s) of {h}x{w}x{c} ({args.scale_law}) starting at seed {args.seed}")


def cmd_encode(args):
    grid = load_grid(args.input)
    oracle = None
    if args.strategy.startswith("oracle"):
        clf = _classifier(args, grid.shape)
        oracle = cross_entropy_oracle(clf, _label(clf, grid))
    stream = codec.encode(grid, args.strategy, args.seed, args.checkpoints, args.clamp_range,
                          args.transmit_order, oracle)
    data = stream.to_bytes()
    with open(args.output, "wb") as fh:
        fh.write(data)
    r = stream.report
    print(f"encoded {args.input} -> {args.output}")
    print(f"  strategy {stream.strategy}  symbols {r.symbols}  planes {stream.max_length}")
    print(f"  total {len(data)} bytes ({stream.bpp:.4f} bpp), side info {stream.prefix_size} bytes, payload {len(stream.payload)} bytes")
    print(f"  payload bits {8 * len(stream.payload)}  ideal {r.ideal_bits:.1f}  estimate {r.estimate_bits:.1f}")
    print(f"  quantization mse {r.quantization_mse!r}")
    print(f"  order digest {r.order_digest}")
    if args.strategy.startswith("oracle") and not args.transmit_order:
        print("  note: order ranks not transmitted; decoding needs --transmit-order at encode time", file=sys.stderr)


def _budget(args):
    if args.bytes is not None:
        return ("bytes", args.bytes)
    if args.level is not None:
        return ("level", args.level)
    return args.budget


def cmd_decode(args):
    stream = _read_stream(args.input)
    result = codec.decode(stream, _budget(args))
    save_grid(LatentGrid(result.values, stream.means(), stream.scales()), args.output)
    print(f"decoded {args.input} -> {args.output}")
    print(f"  bytes {result.bytes_consumed}/{stream.total_size}  symbols {result.symbols_decoded}/{result.total_symbols}"
          f"  truncated {result.truncated}")
    print(f"  plane completion {' '.join(f'{c:.2f}' for c in result.plane_completion)}")
    print(f"  order digest {result.order_digest}")
    if args.reference:
        ref = load_grid(args.reference)
        if ref.shape != stream.shape:
            raise PicmError(f"reference shape {ref.shape} does not match stream shape {stream.shape}")
        print(f"  mse {result.mse(ref)!r}")


def cmd_priority(args):
    grid = load_grid(args.input)
    ranks = None
    if args.strategy.startswith("oracle"):
        clf = _classifier(args, grid.shape)
        stream = codec.encode(grid, args.strategy, args.seed, transmit_order=True,
                              oracle=cross_entropy_oracle(clf, _label(clf, grid)))
        ranks = stream.group_ranks
    stack = decompose(quantize(grid), clamp=args.clamp_range, scales=codec.decoder_scales(grid))
    order = build_order(args.strategy, stack, args.seed, ranks)
    rows = []
    for plane, (perm, scores) in enumerate(zip(order.permutations, order.scores), start=1):
        for rank, (flat, score) in enumerate(zip(perm, scores)):
            h, w, c = np.unravel_index(flat, grid.shape)
            rows.append([plane, rank, int(flat), int(h), int(w), int(c), repr(float(score))])
    _write_csv(args.output, ["plane", "rank", "flat", "h", "w", "c", "score"], rows)
    print(f"{args.strategy} order: {len(rows)} symbols over {len(order.permutations)} planes -> {args.output}")
    print(f"  digest {order.digest()}  decoder-side {'no' if order.requires_side_info else 'yes'}")


def cmd_rate_curve(args):
    n_levels, kind = _level_args(args)
    rows = []
    correct = {}
    for sample, path in enumerate(args.inputs):
        grid = load_grid(path)
        clf = _classifier(args, grid.shape)
        label = _label(clf, grid)
        oracle = cross_entropy_oracle(clf, label) if args.strategy.startswith("oracle") else None
        stream = codec.encode(grid, args.strategy, args.seed, args.checkpoints, args.clamp_range, True, oracle)
        for level, budget in enumerate(controller.resolve_levels(stream, n_levels, kind), start=1):
            result = codec.decode(stream, budget)
            ok = int(clf.predict(result.latent) == label)
            correct.setdefault(level, []).append((budget, ok))
            rows.append([sample, level, budget, repr(8 * budget / stream.pixels), repr(result.mse(grid)), ok])
    _write_csv(args.output, ["sample_id", "level", "bytes", "bpp", "mse", "correct"], rows)
    print(f"rate curve ({args.strategy}, {len(args.inputs)} grid(s)) -> {args.output}")
    for level in sorted(correct):
        b, ok = zip(*correct[level])
        print(f"  level {level:3d}  mean bytes {np.mean(b):10.1f}  accuracy {np.mean(ok):.3f}")


def _profiles(args):
    if args.logits_csv:
        return controller.profiles_from_records(load_logits(args.logits_csv))
    if not args.inputs:
        raise PicmError("give grid files or --logits-csv")
    n_levels, kind = _level_args(args)
    grids = [load_grid(p) for p in args.inputs]
    clf = _classifier(args, grids[0].shape)
    labels = [_label(clf, g) for g in grids]
    params = {"strategy": args.strategy, "seed": args.seed, "checkpoints": args.checkpoints,
              "clamp_range": args.clamp_range}
    return controller.build_profiles(grids, clf, n_levels, kind, labels, params)


def cmd_filter_train(args):
    profiles = _profiles(args)
    data = controller.training_set(profiles)
    model = controller.ConfidenceFilter(l2=args.l2).fit(data.X, data.s)
    model.save(args.output)
    acc = float(np.mean(model.predict(data.X) == data.s))
    print(f"trained filter on {len(data)} rows from {len(profiles)} sample(s) -> {args.output}")
    print(f"  positive rate {data.s.mean():.3f}  training accuracy {acc:.3f}  iterations {model.n_iter_}"
          f"  gradient norm {model.grad_norm_:.2e}{'  (degenerate: single class)' if model.degenerate_ else ''}")


def cmd_adaptive(args):
    model = controller.ConfidenceFilter.load(args.filter)
    profiles = _profiles(args)
    os.makedirs(args.out_dir, exist_ok=True)
    summary = []
    for tau in args.tau:
        rows = []
        for prof in profiles:
            ps = model.predict_proba(prof.features())[:, 1]
            stop = controller.first_crossing(ps, tau)
            preds = prof.predictions
            rows += [controller.TraceRow(prof.sample_id, k + 1, prof.budgets[k], float(ps[k]), int(preds[k]), k + 1 == stop)
                     for k in range(stop)]
        path = os.path.join(args.out_dir, f"trace_tau{tau:.2f}.csv")
        controller.write_trace(path, rows)
        _, nbytes, p, ok = controller.stop_decisions(profiles, model, tau)
        summary.append((tau, nbytes.mean(), ok.mean(), p.mean(), path))
    print(f"adaptive decoding of {len(profiles)} sample(s)")
    for tau, b, acc, p, path in summary:
        print(f"  tau {tau:.2f}  mean bytes {b:10.1f}  accuracy {acc:.3f}  mean p {p:.3f}  -> {path}")


def cmd_ece(args):
    model = controller.ConfidenceFilter.load(args.filter)
    profiles = _profiles(args)
    data = controller.training_set(profiles)
    p_all = model.predict_proba(data.X)[:, 1]
    rows = [["all-levels", "", lo, hi, n, conf, acc] for lo, hi, n, conf, acc in reliability_table(p_all, data.s, args.bins)]
    print(f"filter calibration over {len(data)} (sample, level) rows: ECE {ece(p_all, data.s, args.bins):.4f}")
    tau_conf, tau_ok = [], []
    for tau in args.tau:
        _, _, p, ok = controller.stop_decisions(profiles, model, tau)
        rows += [["stop", tau, lo, hi, n, conf, acc] for lo, hi, n, conf, acc in reliability_table(p, ok, args.bins)]
        tau_conf.append(np.full(len(ok), tau))
        tau_ok.append(ok)
        print(f"  tau {tau:.2f}  accuracy at stop {ok.mean():.3f}  per-decision ECE {ece(p, ok, args.bins):.4f}")
    if args.tau:
        print(f"threshold calibration ECE (tau vs accuracy): {ece(np.concatenate(tau_conf), np.concatenate(tau_ok), args.bins):.4f}")
    _write_csv(args.output, ["scope", "tau", "bin_lo", "bin_hi", "count", "confidence", "accuracy"], rows)
    print(f"  reliability table -> {args.output}")


def build_parser():
    parser = argparse.ArgumentParser(prog="picm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, strategy=True, classifier=False, levels=False, taus=False):
        p.add_argument("--seed", type=int, default=0, help="seed for generation and random ordering")
        if strategy:
            p.add_argument("--strategy", choices=STRATEGIES, default="expvar")
            p.add_argument("--clamp-range", action="store_true", help="clamp coefficients to their trit range")
            p.add_argument("--checkpoints", type=int, default=codec.DEFAULT_CHECKPOINTS, help="cut points per plane")
        if classifier:
            p.add_argument("--classes", type=int, default=10, help="classes of the synthetic classifier")
            p.add_argument("--classifier-seed", type=int, default=1)
        if levels:
            p.add_argument("--levels", type=_levels, default=10, help="level count, or 'planes' for plane boundaries")
            p.add_argument("--level-kind", choices=("checkpoints", "planes"), default="checkpoints")
            p.add_argument("--logits-csv", help="use recorded logits instead of decoding grids")
        if taus:
            p.add_argument("--tau", type=_taus, default=[0.5, 0.6, 0.7], help="comma-separated thresholds")

    p = sub.add_parser("gen", help="write synthetic latent grids")
    common(p, strategy=False)
    p.add_argument("--shape", type=_shape, default=(4, 4, 16), help="H,W,C")
    p.add_argument("--scale-law", default="loguniform:0.5:8", help="constant:S or loguniform:LO:HI")
    p.add_argument("--count", type=int, default=1, help="with N > 1, OUTPUT is a directory")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("encode", help="encode a grid into a progressive stream")
    common(p, classifier=True)
    p.add_argument("--transmit-order", action="store_true", help="store oracle group ranks in the stream")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a stream prefix into a grid")
    budget = p.add_mutually_exclusive_group()
    budget.add_argument("--budget", default="full", help="bytes:N, level:K or full")
    budget.add_argument("--bytes", type=int, help="same as --budget bytes:N")
    budget.add_argument("--level", type=int, help="same as --budget level:K")
    p.add_argument("--reference", help="original grid; prints the MSE against it")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("priority", help="dump the transmission order as CSV")
    common(p, classifier=True)
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_priority)

    p = sub.add_parser("rate-curve", help="bytes, MSE and accuracy per decoding level")
    common(p, classifier=True, levels=True)
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_rate_curve)

    p = sub.add_parser("filter-train", help="train the confidence filter")
    common(p, classifier=True, levels=True)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("inputs", nargs="*")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_filter_train)

    p = sub.add_parser("adaptive", help="threshold-stopped decoding, one trace CSV per tau")
    common(p, classifier=True, levels=True, taus=True)
    p.add_argument("--filter", required=True)
    p.add_argument("inputs", nargs="*")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_adaptive)

    p = sub.add_parser("ece", help="calibration of the filter and of stopping decisions")
    common(p, classifier=True, levels=True, taus=True)
    p.add_argument("--filter", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("inputs", nargs="*")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_ece)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except PicmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
