"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Diagnostics go to
stderr; results (accuracies, reports, CSV) go to stdout or the given files.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .compress.container import decode_container, encode_container
from .compress.report import compression_report
from .data import load_mnist_idx
from .net import Network
from .pipeline import compress_sws, compress_vd_baseline, run_pipeline
from .serialize import load_model, save_model
from .trainer import (
    evaluate_accuracy,
    init_mixture_from_weights,
    pretrain_l2,
    train_phase1_vd,
    train_phase2_sws,
)

log = logging.getLogger("vdsws")

SWEEP_HEADER = ("tau2", "accuracy", "sparsity_pct", "cr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)

    def exit(self, status=0, message=None):
        if message:
            print(message, file=sys.stderr, end="")
        if status:
            raise UsageError(message or "")
        raise SystemExit(0)


def _build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI run configuration (default: desk preset)")
    common.add_argument("--preset", choices=("desk", "paper"), default="desk",
                        help="base configuration the INI file is applied on")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--data-dir", help="directory holding the IDX files")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="vdsws", description="Variational dropout + soft weight sharing "
                "training and compression of dense networks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("config", parents=[common], help="write a configuration file")
    c.add_argument("--out", help="file to write (default: stdout)")

    c = sub.add_parser("pretrain", parents=[common], help="L2 pretraining")
    c.add_argument("--out", required=True)

    c = sub.add_parser("train-vd", parents=[common], help="variational dropout warm-up")
    c.add_argument("--model", required=True)
    c.add_argument("--out", required=True)

    c = sub.add_parser("train-vdsws", parents=[common], help="joint VD + soft weight sharing")
    c.add_argument("--model", required=True)
    c.add_argument("--init-from", help="pretrained model whose weights seed the mixture "
                   "(default: --model)")
    c.add_argument("--out", required=True)

    def codec_flags(c):
        c.add_argument("--method", choices=config_mod.METHODS)
        c.add_argument("--offset-bits", type=int)
        c.add_argument("--threshold", type=float)
        c.add_argument("--k-baseline", type=int)

    c = sub.add_parser("compress", parents=[common], help="quantise, prune and encode")
    c.add_argument("--model", required=True)
    c.add_argument("--out", required=True, help="BVNC container path")
    c.add_argument("--report-json")
    codec_flags(c)

    c = sub.add_parser("evaluate", parents=[common], help="test accuracy of a model")
    g = c.add_mutually_exclusive_group(required=True)
    g.add_argument("--model")
    g.add_argument("--container")

    c = sub.add_parser("sweep", parents=[common],
                       help="accuracy / sparsity / CR as tau2 varies (CSV)")
    c.add_argument("--model", required=True, help="VD warm-up model")
    c.add_argument("--init-from", help="pretrained model seeding the mixture")
    c.add_argument("--tau2", help="comma-separated values (default: config sweep)")
    c.add_argument("--out", help="CSV file (default: stdout)")
    codec_flags(c)

    c = sub.add_parser("report", parents=[common], help="print a compression report")
    g = c.add_mutually_exclusive_group(required=True)
    g.add_argument("--model")
    g.add_argument("--container")
    c.add_argument("--json", help="also write the JSON report here")
    codec_flags(c)

    c = sub.add_parser("pipeline", parents=[common], help="pretrain, train and compress")
    c.add_argument("--out-dir", required=True)
    return p


def _config(args):
    cfg = config_mod.preset(args.preset)
    if args.config:
        cfg = config_mod.load_config(args.config, cfg)
    if args.seed is not None:
        cfg.schedule.seed = args.seed
    if args.data_dir:
        cfg.data.dir = args.data_dir
    c = cfg.compression
    for flag in ("method", "offset_bits", "threshold", "k_baseline"):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(c, flag, v)
    cfg.mode = args.command if args.command in config_mod.MODES else None
    return cfg.validate()


def _train(cfg):
    d = cfg.data
    split = load_mnist_idx(d.path("train_images"), d.path("train_labels"), d.train_limit)
    return split.as_tuple()


def _test(cfg):
    d = cfg.data
    split = load_mnist_idx(d.path("test_images"), d.path("test_labels"), d.test_limit)
    return split.as_tuple()


def _compress(cfg, net, prior, test=None):
    c = cfg.compression
    sizes = net.sizes
    if c.method == "sws":
        if prior is None:
            raise ValueError("method 'sws' needs a model trained with a mixture prior")
        return compress_sws(net, prior, sizes, c.offset_bits, test)
    return compress_vd_baseline(net, sizes, c.offset_bits, c.threshold, c.k_baseline, test)


def cmd_config(args, cfg, out):
    text = config_mod.to_ini(cfg)
    if args.out:
        Path(args.out).write_text(text)
    else:
        out.write(text)


def cmd_pretrain(args, cfg, out):
    s = cfg.schedule
    net = Network.init(list(cfg.layers), np.random.default_rng(s.seed))
    net, _ = pretrain_l2(net, _train(cfg), s.weight_decay, s)
    save_model(args.out, net)


def cmd_train_vd(args, cfg, out):
    net, _, _ = load_model(args.model)
    save_model(args.out, train_phase1_vd(net, _train(cfg), cfg.schedule))


def cmd_train_vdsws(args, cfg, out):
    s = cfg.schedule
    net, _, _ = load_model(args.model)
    seed_net = load_model(args.init_from)[0] if args.init_from else net
    prior = init_mixture_from_weights(seed_net.flat_theta(), s.K, s.pi0)
    net, prior = train_phase2_sws(net, _train(cfg), prior, s)
    save_model(args.out, net, prior)


def cmd_compress(args, cfg, out):
    net, prior, _ = load_model(args.model)
    _, pruned, encoded, report = _compress(cfg, net, prior, _test(cfg))
    Path(args.out).write_bytes(encode_container(pruned, encoded))
    if args.report_json:
        Path(args.report_json).write_text(report.to_json() + "\n")
    out.write(report.to_text() + "\n")


def cmd_evaluate(args, cfg, out):
    if args.model:
        net = load_model(args.model)[0]
    else:
        net, _ = decode_container(Path(args.container).read_bytes())
    out.write(f"accuracy: {evaluate_accuracy(net, _test(cfg)):.4f}\n")


def _sweep_rows(cfg, phase1, seed_net, taus):
    s = cfg.schedule
    c = cfg.compression
    train, test = _train(cfg), _test(cfg)
    base = init_mixture_from_weights(seed_net.flat_theta(), s.K, s.pi0)
    for tau2 in taus:
        net, prior = train_phase2_sws(phase1, train, base, s, tau2=tau2)
        *_, rep = compress_sws(net, prior, phase1.sizes, c.offset_bits, test)
        yield (repr(float(tau2)), f"{rep.accuracy_after:.6f}", f"{100 * rep.sparsity:.6f}",
               f"{rep.compression_ratio:.6f}")


def cmd_sweep(args, cfg, out):
    phase1, _, _ = load_model(args.model)
    seed_net = load_model(args.init_from)[0] if args.init_from else phase1
    if args.tau2:
        try:
            taus = [float(t) for t in args.tau2.split(",") if t.strip()]
        except ValueError:
            raise UsageError(f"--tau2: cannot parse {args.tau2!r}") from None
        if not taus or any(t < 0 for t in taus):
            raise UsageError("--tau2 needs nonnegative values")
    else:
        taus = list(cfg.sweep_tau2)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for row in _sweep_rows(cfg, phase1, seed_net, taus):
        w.writerow(row)
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        out.write(buf.getvalue())


def cmd_report(args, cfg, out):
    test = _test(cfg)
    if args.model:
        net, prior, _ = load_model(args.model)
        *_, report = _compress(cfg, net, prior, test)
    else:
        qnet, encoded = decode_container(Path(args.container).read_bytes())
        # the container holds pruned widths; the original comes from the config
        sizes = list(cfg.layers)
        if sizes[0] != qnet.sizes[0] or sizes[-1] != qnet.sizes[-1]:
            raise ValueError(f"container widths {qnet.sizes} do not match layers {sizes}")
        report = compression_report(sizes, qnet, encoded, evaluate_accuracy(qnet, test),
                                    "container")
    out.write(report.to_text() + "\n")
    out.write(report.to_json() + "\n")
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n")


def cmd_pipeline(args, cfg, out):
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    res = run_pipeline(_train(cfg), _test(cfg), cfg.schedule, sizes=cfg.layers,
                       offset_bits=cfg.compression.offset_bits)
    save_model(outdir / "pretrained.bvnm", res.pretrained)
    save_model(outdir / "vd.bvnm", res.phase1)
    save_model(outdir / "vdsws.bvnm", res.sws, res.prior)
    (outdir / "model.bvnc").write_bytes(encode_container(res.pruned, res.encoded))
    (outdir / "report.json").write_text(res.report.to_json() + "\n")
    (outdir / "report.txt").write_text(res.report.to_text() + "\n")
    (outdir / "config.ini").write_text(config_mod.to_ini(cfg))
    out.write(res.report.to_text() + "\n")


COMMANDS = {
    "config": cmd_config, "pretrain": cmd_pretrain, "train-vd": cmd_train_vd,
    "train-vdsws": cmd_train_vdsws, "compress": cmd_compress, "evaluate": cmd_evaluate,
    "sweep": cmd_sweep, "report": cmd_report, "pipeline": cmd_pipeline,
}


def run_cli(argv=None, out=None):
    out = out or sys.stdout
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg = _config(args)
    except UsageError:
        return 1
    except SystemExit as e:
        return 0 if e.code in (None, 0) else 1
    except config_mod.ConfigError as e:
        print(f"vdsws: config error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"vdsws: {e}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](args, cfg, out)
    except UsageError as e:
        print(f"vdsws: error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as e:
        print(f"vdsws: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
