"""Command-line entry point: ``mwprae <command> [options]``.

Every command writes ``<output>.cfg`` next to its main output: the full run
configuration plus a ``[run]`` section naming the command and its inputs.
``mwprae rerun <sidecar>`` repeats the run from that file alone. Failures print
one line ``error: <category>: <detail>`` to stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import dependency_study
from .channel import Dataset, build_dataset
from .config import RunConfig, read_section
from .evaluate import evaluate_split, noise_sweep, stft, write_spectrogram_csv, write_sweep_csv
from .rae import check_length, rae_forward
from .train import CheckpointError, NonFiniteError, load_checkpoint, save_checkpoint, train

log = logging.getLogger("mwprae")

EXIT_CODES = {"usage": 2, "io": 3, "format": 4, "value": 5, "numeric": 6}


class CliError(Exception):
    def __init__(self, category: str, detail: str):
        super().__init__(detail)
        self.category = category


def read_waveform_csv(path) -> np.ndarray:
    """``index,amplitude`` rows (header optional)."""
    values = []
    with open(path, newline="") as f:
        for n, row in enumerate(csv.reader(f)):
            if not row:
                continue
            try:
                values.append(float(row[1]))
            except (ValueError, IndexError):
                if n == 0:
                    continue
                raise CliError("format", f"{path}:{n + 1}: expected 'index,amplitude', got {row!r}") from None
    if not values:
        raise CliError("format", f"{path}: no samples")
    return np.asarray(values)


def write_waveform_csv(path, samples: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "amplitude"])
        for i, v in enumerate(samples):
            w.writerow([i, repr(float(v))])


def sidecar_path(out) -> Path:
    return Path(str(out) + ".cfg")


def write_sidecar(target, cfg: RunConfig, command: str, **paths) -> None:
    run = {"command": command, "version": __version__, **{k: str(v) for k, v in paths.items()}}
    sidecar_path(target).write_text(cfg.dumps({"run": run}))


def _load_config(args, data_path=None) -> RunConfig:
    """Defaults, then the dataset's sidecar (if any), then keys from ``--config``."""
    cfg = RunConfig()
    if data_path is not None and sidecar_path(data_path).exists():
        cfg = RunConfig.load(sidecar_path(data_path))
    if args.config:
        cfg = RunConfig.load(args.config, base=cfg)
    return cfg


def cmd_gen_data(args) -> None:
    cfg = _load_config(args)
    d = cfg.data
    if args.channel is not None:
        if args.channel in ("pps-like", "padc-like"):
            d = replace(d, channel=args.channel)
        else:
            custom = RunConfig.load(args.channel)
            d = replace(d, channel="custom")
            cfg.channel = custom.channel
    count = args.count if args.count is not None else d.count
    if args.split is not None:
        split = tuple(int(v) for v in args.split.split(","))
    elif args.count is not None:
        train_n = round(count * d.split[0] / sum(d.split))
        split = (train_n, count - train_n)
    else:
        split = d.split
    d = replace(
        d,
        category=args.category or d.category,
        count=count,
        split=split,
        length=args.length or d.length,
        master_seed=d.master_seed if args.seed is None else args.seed,
    )
    cfg.data = d
    ds = build_dataset(d.category, cfg.channel_model(), cfg.acquisition_config(), d.count, d.split,
                       d.master_seed, d.length, d.sample_rate, d.peak)
    ds.save(args.out)
    write_sidecar(args.out, cfg, "gen-data", out=args.out)
    log.info("wrote %d examples (%d train / %d val) to %s", len(ds), *d.split, args.out)


def _read_dataset(path) -> Dataset:
    try:
        return Dataset.load(path)
    except ValueError as e:
        raise CliError("format", str(e)) from None


def _load_dataset(path) -> Dataset:
    ds = _read_dataset(path)
    check_length(ds.length)
    return ds


def cmd_train(args) -> None:
    cfg = _load_config(args, args.data)
    t = cfg.train
    iterations = t.total_iterations if args.iterations is None else args.iterations
    decay_at = t.decay_at
    if args.iterations is not None and args.iterations != t.total_iterations:
        # keep the decay at the same fraction of the run
        decay_at = int(round(iterations * t.decay_at / t.total_iterations))
    cfg.train = replace(
        t,
        total_iterations=iterations,
        decay_at=decay_at,
        master_seed=t.master_seed if args.seed is None else args.seed,
        batch_size=args.batch_size or t.batch_size,
        log_every=t.log_every if args.log_every is None else args.log_every,
        checkpoint_every=t.checkpoint_every if args.checkpoint_every is None else args.checkpoint_every,
    )
    ds = _load_dataset(args.data)
    ckpt_dir = None
    if cfg.train.checkpoint_every:
        ckpt_dir = Path(str(args.out) + ".ckpts")
        ckpt_dir.mkdir(exist_ok=True)
    params, curves, state = train(ds, cfg.train, checkpoint_dir=ckpt_dir)
    save_checkpoint(args.out, params, state, cfg.train.total_iterations)
    curves_path = Path(str(args.out) + ".loss.csv")
    curves.to_csv(curves_path)
    write_sidecar(args.out, cfg, "train", data=args.data, out=args.out, curves=curves_path)


def cmd_infer(args) -> None:
    params, _, _ = load_checkpoint(args.ckpt)
    x = read_waveform_csv(args.input)
    try:
        check_length(x.size)
    except ValueError as e:
        raise CliError("value", str(e)) from None
    y, _ = rae_forward(x, params)
    write_waveform_csv(args.out, y)
    write_sidecar(args.out, _load_config(args), "infer", ckpt=args.ckpt, input=args.input, out=args.out)


def cmd_evaluate(args) -> None:
    params, _, _ = load_checkpoint(args.ckpt)
    ds = _load_dataset(args.data)
    rep = evaluate_split(params, ds)
    rep.to_csv(args.report)
    cfg = _load_config(args, args.data)
    write_sidecar(args.report, cfg, "evaluate", ckpt=args.ckpt, data=args.data, report=args.report)
    print(f"mean improvement {rep.mean_improvement_db:.3f} dB over {len(rep.mse_before)} validation examples")


def cmd_noise_sweep(args) -> None:
    params, _, _ = load_checkpoint(args.ckpt)
    ds = _load_dataset(args.data)
    cfg = _load_config(args, args.data)
    points = noise_sweep(params, ds, cfg.channel_model(), cfg.acquisition_config(), cfg.eval.awgn_levels,
                         cfg.eval.avg_counts, cfg.eval.sweep_seed)
    write_sweep_csv(args.out, points)
    write_sidecar(args.out, cfg, "noise-sweep", ckpt=args.ckpt, data=args.data, out=args.out)


def cmd_tsne(args) -> None:
    params, _, _ = load_checkpoint(args.ckpt)
    ds = _load_dataset(args.data)
    cfg = _load_config(args, args.data)
    t = cfg.tsne
    res = dependency_study(params, ds, t.stride_subsample, t.max_points, t.perplexity, t.iterations, t.seed)
    res.to_csv(args.out)
    write_sidecar(args.out, cfg, "tsne", ckpt=args.ckpt, data=args.data, out=args.out)
    print(f"frequency score {res.freq_score:.4f}  amplitude score {res.amp_score:.4f}  "
          f"shuffled {res.shuffled_freq_score:.4f}  KL {res.final_kl:.4f}")


def cmd_spectrogram(args) -> None:
    cfg = _load_config(args)
    x = read_waveform_csv(args.input)
    window = args.window or cfg.eval.stft_window
    hop = args.hop or cfg.eval.stft_hop
    write_spectrogram_csv(args.out, stft(x, window, hop), window, args.sample_rate or cfg.data.sample_rate)
    write_sidecar(args.out, cfg, "spectrogram", input=args.input, out=args.out)


def cmd_export(args) -> None:
    ds = _read_dataset(args.data)
    if not 0 <= args.index < len(ds):
        raise CliError("value", f"index {args.index} outside [0, {len(ds)})")
    write_waveform_csv(args.out, (ds.distorted if args.which == "distorted" else ds.clean)[args.index])


def cmd_rerun(args) -> int:
    run = read_section(args.sidecar, "run")
    if "command" not in run:
        raise CliError("format", f"{args.sidecar}: no [run] section")
    command = run["command"]
    argv = [command, "--config", str(args.sidecar)]
    for key, opt in (("data", "--data"), ("ckpt", "--ckpt"), ("input", "--in")):
        if key in run:
            argv += [opt, run[key]]
    out_key, out_flag = ("report", "--report") if command == "evaluate" else ("out", "--out")
    argv += [out_flag, args.out or run[out_key]]
    return main(argv)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mwprae", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def command(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="config file (INI); flags override it")
        p.set_defaults(fn=fn)
        return p

    p = command("gen-data", cmd_gen_data, "synthesize a (clean, distorted) dataset file")
    p.add_argument("--category", choices=["lfm", "costas"])
    p.add_argument("--channel", help="pps-like, padc-like, or a config file with a [channel] section")
    p.add_argument("--count", type=int)
    p.add_argument("--split", help="train,val sizes, e.g. 200,50")
    p.add_argument("--length", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = command("train", cmd_train, "train the network on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--log-every", type=int)
    p.add_argument("--checkpoint-every", type=int)

    p = command("infer", cmd_infer, "recover one waveform CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = command("evaluate", cmd_evaluate, "per-example MSE report on the validation split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)

    p = command("noise-sweep", cmd_noise_sweep, "AWGN and averaging-count robustness sweep")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = command("tsne", cmd_tsne, "t-SNE dependency study of bottleneck features")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = command("spectrogram", cmd_spectrogram, "STFT magnitude of a waveform CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int)
    p.add_argument("--hop", type=int)
    p.add_argument("--sample-rate", type=float)

    p = command("export", cmd_export, "write one dataset row as a waveform CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--which", choices=["clean", "distorted"], default="distorted")
    p.add_argument("--out", required=True)

    p = sub.add_parser("rerun", help="repeat a run from its .cfg sidecar")
    p.add_argument("sidecar")
    p.add_argument("--out", help="write to this path instead of the recorded one")
    p.set_defaults(fn=cmd_rerun)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.fn(args)
    except CliError as e:
        return _fail(e.category, str(e))
    except (CheckpointError,) as e:
        return _fail("format", str(e))
    except NonFiniteError as e:
        return _fail("numeric", str(e))
    except OSError as e:
        return _fail("io", f"{e.filename or ''}: {e.strerror or e}".lstrip(": "))
    except ValueError as e:
        return _fail("value", str(e))
    return rc or 0


def _fail(category: str, detail: str) -> int:
    print(f"error: {category}: {' '.join(detail.split())}", file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
