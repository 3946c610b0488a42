"""Command-line entry point: ``ynet <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or file-format error,
3 failed internal check (gradcheck failure, diverged training).

A typical desk-scale pipeline on synthetic data::

    ynet synth-data --out data/train --pairs 50 --seed 0
    ynet synth-data --out data/test --pairs 10 --seed 1
    ynet train --data data/train --val-data data/test --arch ynet \\
        --base-channels 4 --epochs 30 --batch 2 --lr 1e-3 --checkpoint ynet.ckpt
    ynet separate --ckpt ynet.ckpt --in data/test/000/mixture.wav --out est/000/vocals.wav
    ynet evaluate --ref data/test --est est --out report.csv

The full-scale recipe is ``--data <musdb18 stems> --base-channels 16
--batch 16 --lr 1e-4 --epochs 100``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .audio import AudioClip, read_wav, write_wav
from .errors import ConfigError, FormatError, TrainingDiverged, UsageError

log = logging.getLogger("ynet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _pair_dir(root, i, total):
    return os.path.join(root, f"{i:0{max(3, len(str(total - 1)))}d}")


def cmd_synth_data(args):
    from .train import synth_dataset

    if args.pairs < 1:
        raise UsageError(f"--pairs must be at least 1, got {args.pairs}")
    for i, pair in enumerate(synth_dataset(args.seed, args.pairs)):
        folder = _pair_dir(args.out, i, args.pairs)
        os.makedirs(folder, exist_ok=True)
        write_wav(AudioClip(pair.mixture, pair.sample_rate), os.path.join(folder, "mixture.wav"), "float32")
        write_wav(AudioClip(pair.vocals, pair.sample_rate), os.path.join(folder, "vocals.wav"), "float32")
    print(f"wrote {args.pairs} pairs to {args.out}")
    return EXIT_OK


_TRAIN_FLAGS = ("data", "synth_pairs", "val_data", "val_synth_pairs", "epochs", "batch", "lr", "seed",
                "checkpoint", "loss_log", "arch", "base_channels", "depth", "dropout", "log_mag")


def cmd_train(args):
    from .model import parse_key_values
    from .train import TrainConfig, train

    items = {}
    if args.config:
        with open(args.config) as fh:
            items.update(parse_key_values(fh.read()))
    for name in _TRAIN_FLAGS:
        value = getattr(args, name)
        if value is not None:
            items[name] = str(value)
    items.setdefault("checkpoint", "ynet.ckpt")
    items.setdefault("loss_log", "loss_log.csv")
    cfg = TrainConfig.from_dict(items)
    if not (cfg.data or cfg.synth_pairs):
        raise UsageError("no training data: pass --data DIR or --synth-pairs N")
    result = train(cfg, on_step=_progress if args.verbose else None)
    print(f"checkpoint: {cfg.checkpoint}")
    print(f"loss log: {cfg.loss_log}")
    print(f"final train loss: {result.final_train_loss:.6g}")
    return EXIT_OK


def _progress(row):
    val = "" if row["val_loss"] is None else f" val {row['val_loss']:.6g}"
    log.info("epoch %d step %d loss %.6g%s", row["epoch"], row["step"], row["train_loss"], val)


def cmd_separate(args):
    from .checkpoint import load_model
    from .dsp import to_pgm
    from .model import separate

    model = load_model(args.ckpt)
    mixture = read_wav(args.inp)
    vocal, mask = separate(mixture, model)
    _ensure_parent(args.out)
    write_wav(vocal, args.out, "float32")
    if args.mask_out:
        _ensure_parent(args.mask_out)
        with open(args.mask_out, "w") as fh:
            # rows are time frames, columns frequency bins
            fh.write(to_pgm(mask.T))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_evaluate(args):
    from .metrics import evaluate_pairs

    report = evaluate_pairs(args.ref, args.est)
    _ensure_parent(args.out)
    report.write_csv(args.out)
    for name in report.missing:
        print(f"warning: {name} has no counterpart, skipped", file=sys.stderr)
    if report.rows:
        m = report.mean()
        print(f"{len(report.rows)} clips: mean SDR {m['sdr_db']:.2f} dB, "
              f"SI-SNR {m['si_snr_db']:.2f} dB, STOI {m['stoi']:.3f}")
    else:
        print("warning: no clip pairs to evaluate", file=sys.stderr)
    return EXIT_OK


def cmd_render(args):
    from .dsp import mel_render, stft, to_pgm

    if args.mel < 1:
        raise UsageError(f"--mel must be at least 1, got {args.mel}")
    spec = stft(read_wav(args.inp))
    _ensure_parent(args.out)
    with open(args.out, "w") as fh:
        fh.write(to_pgm(mel_render(spec, args.mel)))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import format_table, run_suite

    results = run_suite(seeds=args.seeds, broken=args.break_op, include_model=not args.skip_model,
                        start=args.seed)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_CHECK
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def build_parser():
    p = _Parser(prog="ynet", description="Hybrid waveform + spectrogram singing-voice separation.")
    p.add_argument("--version", action="version", version=f"ynet {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("synth-data", help="write a synthetic mixture/vocals dataset")
    s.add_argument("--out", required=True, metavar="DIR")
    s.add_argument("--pairs", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train", help="train a model; flags override --config")
    s.add_argument("--config", metavar="FILE", help="key=value file with TrainConfig fields")
    s.add_argument("--data", metavar="DIR", help="stems root: <song>/mixture.wav, vocals.wav")
    s.add_argument("--synth-pairs", type=int, help="train on N in-memory synthetic pairs instead")
    s.add_argument("--val-data", metavar="DIR")
    s.add_argument("--val-synth-pairs", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--arch", choices=["ynet", "unet-spec", "unet-wave", "unet_spec", "unet_wave"])
    s.add_argument("--base-channels", type=int)
    s.add_argument("--depth", type=int)
    s.add_argument("--dropout", type=float)
    s.add_argument("--log-mag", action="store_const", const=True, default=None,
                   help="feed log1p magnitudes to the spectral branch")
    s.add_argument("--checkpoint", metavar="FILE", help="default ynet.ckpt")
    s.add_argument("--loss-log", metavar="CSV", help="default loss_log.csv")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("separate", help="extract the vocal from a mixture WAV")
    s.add_argument("--ckpt", required=True, metavar="FILE")
    s.add_argument("--in", dest="inp", required=True, metavar="WAV")
    s.add_argument("--out", required=True, metavar="WAV")
    s.add_argument("--mask-out", metavar="PGM", help="mask image, rows = time, columns = frequency")
    s.set_defaults(func=cmd_separate)

    s = sub.add_parser("evaluate", help="SDR / SI-SNR / STOI of estimates against references")
    s.add_argument("--ref", required=True, metavar="DIR")
    s.add_argument("--est", required=True, metavar="DIR")
    s.add_argument("--out", required=True, metavar="CSV")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("render", help="mel spectrogram of a WAV as a PGM image")
    s.add_argument("--in", dest="inp", required=True, metavar="WAV")
    s.add_argument("--out", required=True, metavar="PGM")
    s.add_argument("--mel", type=int, default=128, metavar="N")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    s.add_argument("--seed", type=int, default=0, help="first seed")
    s.add_argument("--seeds", type=int, default=10, help="number of seeds")
    s.add_argument("--skip-model", action="store_true", help="op checks only")
    s.add_argument("--break-op", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
