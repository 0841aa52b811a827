"""Command-line front end: simulate, pipeline, dataset, train, eval, export-figure.

Every command takes ``--config FILE`` (JSON), writes into ``--out`` (default
``$RDGESTURE_OUT`` or ``./runs``) and echoes the effective configuration to
``effective_config.json``; passing that echo back as ``--config`` repeats the
run. Flags override the config file, which overrides built-in defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("rdgesture")

CONFIG_KEYS = {"command", "rng_seed", "pipeline", "scene", "train", "model", "split", "args"}
EXIT_CONFIG = 2
EXIT_CHECK = 3


class ConfigError(ValueError):
    pass


class CheckFailed(AssertionError):
    pass


# ---------------------------------------------------------------- config


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _resolve(args, cfg: dict, defaults: dict) -> dict:
    """Flag value if given, else config ``args`` entry, else default."""
    from_cfg = cfg.get("args", {})
    unknown = set(from_cfg) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown args in config: {sorted(unknown)}")
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else from_cfg.get(key, default)
    return out


def _pipeline_cfg(cfg: dict):
    from .pipeline import PipelineConfig
    from .synthetic import DATASET_PIPELINE

    block = cfg.get("pipeline")
    if block is None:
        return DATASET_PIPELINE
    return PipelineConfig.from_dict(block)


def _scene_cfg(cfg: dict, pcfg):
    from .synthetic import SceneConfig

    block = dict(cfg.get("scene", {}))
    unknown = set(block) - set(SceneConfig.__dataclass_fields__) | ({"pipeline"} & set(block))
    if unknown:
        raise ConfigError(f"unknown scene keys: {sorted(unknown)}")
    for key in ("mover_range", "mover_speed"):
        if key in block:
            block[key] = tuple(block[key])
    return SceneConfig(pipeline=pcfg, **block)


def _train_cfg(cfg: dict, seed: int):
    from .learn import TrainConfig

    block = {"rng_seed": seed, **cfg.get("train", {})}
    return TrainConfig.from_dict(block)


def _model_spec(cfg: dict):
    from .learn import CnnGruSpec

    return CnnGruSpec.from_dict(cfg.get("model", {}))


def _split_spec(cfg: dict, resolved: dict, seed: int):
    from .dataio import SplitSpec

    block = dict(cfg.get("split", {}))
    if resolved.get("protocol") is not None:
        block["protocol"] = resolved["protocol"]
    if resolved.get("user") is not None:
        block["user"] = resolved["user"]
    if resolved.get("train_locations"):
        block["train_locations"] = resolved["train_locations"].split(",")
    if resolved.get("test_location") is not None:
        block["test_location"] = resolved["test_location"]
    block.setdefault("rng_seed", seed)
    return SplitSpec.from_dict(block)


def _echo(out: Path, command: str, cfg: dict, resolved: dict, extra: dict) -> None:
    echo = {"command": command, "rng_seed": cfg.get("rng_seed", 0), "args": resolved}
    echo.update(extra)
    (out / "effective_config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise CheckFailed(msg)


def _check_clips(clips, pcfg) -> None:
    for c in clips:
        _check(c.frames.shape == (pcfg.window, pcfg.frame_size, pcfg.frame_size), f"clip shape {c.frames.shape}")
        _check(float(c.frames.min()) >= 0 and float(c.frames.max()) <= 1, "clip values outside [0, 1]")
        _check(abs(c.duration - pcfg.clip_duration) < 1e-9, f"clip duration {c.duration}")


def _check_report(rep) -> None:
    conf = np.array(rep.confusion)
    total = conf.sum()
    _check(total > 0, "empty evaluation set")
    _check(abs(rep.accuracy - 100.0 * np.trace(conf) / total) < 1e-9, "accuracy != trace/total")
    for name, row in zip(rep.class_names, conf):
        _check(rep.per_class[name]["support"] == int(row.sum()), "support != confusion row sum")


# ---------------------------------------------------------------- commands


def cmd_simulate(args, cfg, out: Path) -> int:
    from .scenario import load_scenario, save_archive, simulate_scenario

    r = _resolve(args, cfg, {"scenario": None, "archive": None})
    if r["scenario"] is None:
        raise ConfigError("simulate needs a scenario file")
    sc = load_scenario(r["scenario"])
    seed = args.seed if args.seed is not None else cfg.get("rng_seed")
    if seed is not None:
        sc["rng_seed"] = int(seed)
    radio, streams = simulate_scenario(sc)
    name = r["archive"] or Path(r["scenario"]).stem + ".npz"
    path = out / name
    side = save_archive(path, radio, streams)
    labels = sorted({g.value for s in streams for *_, g in s.annotations})
    print(f"wrote {path} ({len(streams)} streams, labels: {', '.join(labels) or 'none'})")
    print(f"wrote {side}")
    if args.check:
        _, again = simulate_scenario(sc)
        for a, b in zip(streams, again):
            _check(np.array_equal(a.channel.data, b.channel.data), "simulation is not deterministic")
            _check(bool(np.all(np.isfinite(a.channel.data))), "non-finite channel values")
    _echo(out, "simulate", {"rng_seed": sc.get("rng_seed", 0)}, r, {})
    return 0


def _parse_spectrogram(spec: str):
    if spec == "off":
        return "all_subcarriers", None
    key, _, val = spec.partition("=")
    if key != "range_filtered":
        raise ConfigError(f"--spectrogram takes range_filtered=<metres> or off, got {spec!r}")
    if val == "off":
        return "all_subcarriers", None
    try:
        return "range_filtered", float(val)
    except ValueError as exc:
        raise ConfigError(f"bad spectrogram threshold {val!r}") from exc


def _export_spectrogram(out: Path, stem: str, D, radio, pcfg, mode, threshold) -> Path:
    from .rdpipe import velocity_spectrogram, write_csv, write_pgm
    from .sync import synchronize

    if pcfg.synchronize:
        D, _ = synchronize(D, pcfg.sync)
    sg = velocity_spectrogram(D, radio, mode, threshold if threshold is not None else 1.0, pcfg.grid)
    tag = "off" if mode == "all_subcarriers" else f"rf{threshold:g}m"
    base = out / f"{stem}_spectrogram_{tag}"
    snr = sg.snr()
    write_csv(base.with_suffix(".csv"), snr, sg.times, sg.velocity_axis)
    write_pgm(
        base.with_suffix(".pgm"), snr.T[::-1], 0.0, 40.0,
        time_s=sg.times, velocity_mps_top_to_bottom=sg.velocity_axis[::-1], mode=[mode],
    )
    return base


def cmd_pipeline(args, cfg, out: Path) -> int:
    from .dataio import save_clips
    from .pipeline import process_stream, rd_stream
    from .rdpipe import write_pgm
    from .scenario import load_archive

    r = _resolve(args, cfg, {"archive": None, "spectrogram": [], "figures": False, "store": "clips.bin"})
    if r["archive"] is None:
        raise ConfigError("pipeline needs an archive")
    pcfg = _pipeline_cfg(cfg)
    radio, streams = load_archive(r["archive"])
    if radio != pcfg.radio:
        pcfg = dataclasses.replace(pcfg, radio=radio)
    specs = [_parse_spectrogram(s) for s in r["spectrogram"]]
    clips = []
    for st in streams:
        got = process_stream(
            st["data"], st["annotations"], pcfg, threads=args.threads or 1,
            source=f"{Path(r['archive']).name}:{st['name']}",
        )
        clips.extend(got)
        for mode, thr in specs:
            base = _export_spectrogram(out, st["name"], st["data"], radio, pcfg, mode, thr)
            print(f"wrote {base}.csv/.pgm")
        if r["figures"]:
            maps, _ = rd_stream(st["data"], pcfg, args.threads or 1)
            for k, m in enumerate(maps):
                write_pgm(
                    out / f"{st['name']}_rd_{k:03d}.pgm", m.values, 0.0, 40.0,
                    range_m=m.range_axis, velocity_mps=m.velocity_axis, timestamp=[m.timestamp],
                )
    n = save_clips(clips, out / r["store"], (pcfg.window, pcfg.frame_size, pcfg.frame_size))
    labelled = sum(c.label is not None for c in clips)
    print(f"wrote {out / r['store']} ({n} clips, {labelled} labelled)")
    if args.check:
        _check_clips(clips, pcfg)
    _echo(out, "pipeline", cfg, r, {"pipeline": pcfg.to_dict()})
    return 0


def cmd_dataset(args, cfg, out: Path) -> int:
    from .dataio import save_clips
    from .synthetic import generate_dataset, make_users

    r = _resolve(
        args, cfg,
        {"users": 5, "reps": 20, "movers": None, "locations": "AB", "store": "clips.bin", "source": "synthetic"},
    )
    seed = args.seed if args.seed is not None else int(cfg.get("rng_seed", 0))
    pcfg = _pipeline_cfg(cfg)
    scene = _scene_cfg(cfg, pcfg)
    if r["movers"] is not None:
        scene = dataclasses.replace(scene, movers=int(r["movers"]))
    users = make_users(int(r["users"]), seed, r["locations"])
    clips = generate_dataset(
        scene=scene, reps=int(r["reps"]), seed=seed, users=users, threads=args.threads or 1, source=r["source"]
    )
    n = save_clips(clips, out / r["store"])
    print(f"wrote {out / r['store']} ({n} clips)")
    if args.check:
        _check_clips(clips, pcfg)
    _echo(out, "dataset", {"rng_seed": seed}, r, {"scene": {k: v for k, v in scene.to_dict().items() if k != "pipeline"}, "pipeline": pcfg.to_dict()})
    return 0


def _load_split(store_clips, cfg, r, seed):
    from .dataio import make_split, read_split

    if r.get("split_file"):
        spec, parts = read_split(r["split_file"])
        return spec, tuple([store_clips[i] for i in p] for p in parts)
    spec = _split_spec(cfg, r, seed)
    return spec, make_split(store_clips, spec)


def _check_split(spec, parts) -> None:
    train, val, test = parts
    if spec.protocol == "leave_one_user_out":
        _check(all(c.user != spec.user for c in train + val), "held-out user leaked into train/val")
        _check(all(c.user == spec.user for c in test), "test holds other users")
    if spec.protocol == "cross_location":
        _check(all(c.location != spec.test_location for c in train + val), "test location leaked")
        _check(all(c.location == spec.test_location for c in test), "test holds other locations")


def _write_report(out: Path, rep, name: str) -> None:
    rep.to_json(out / f"{name}.json")
    print("model | accuracy | macro-F1 | params | GFLOPs")
    print(rep.table_row())
    print("gesture | accuracy | F1")
    for g, pc in rep.per_class.items():
        print(f"{g} | {pc['accuracy']:.2f} | {pc['f1']:.2f}")


_SPLIT_ARGS = {"protocol": None, "user": None, "train_locations": None, "test_location": None, "split_file": None}


def cmd_train(args, cfg, out: Path) -> int:
    from .dataio import load_clips, split_indices, write_split
    from .learn import save_checkpoint, train, write_loss_curve

    r = _resolve(args, cfg, {"store": None, "min_accuracy": None, **_SPLIT_ARGS})
    if r["store"] is None:
        raise ConfigError("train needs a clip store")
    if not Path(r["store"]).exists():
        raise FileNotFoundError(f"clip store not found: {r['store']}")
    seed = args.seed if args.seed is not None else int(cfg.get("rng_seed", 0))
    clips = [c for c in load_clips(r["store"]) if c.label is not None]
    spec, parts = _load_split(clips, cfg, r, seed)
    tcfg = _train_cfg(cfg, seed)
    mspec = _model_spec(cfg)

    def progress(run, epoch, loss, acc):
        log.info("run %d epoch %d train_loss %.4f val_acc %.2f", run, epoch, loss, acc)

    res = train(parts[0], parts[1], parts[2], mspec, tcfg, epoch_callback=progress)
    save_checkpoint(res.model, out / "checkpoint.bin")
    write_loss_curve(out / "loss_curve.csv", res.loss_curve)
    if not r.get("split_file"):
        write_split(out / "split.json", spec, split_indices(clips, spec))
    _write_report(out, res.report, "report")
    if args.check:
        _check_split(spec, parts)
        _check_report(res.report)
        if r["min_accuracy"] is not None:
            _check(res.report.accuracy >= float(r["min_accuracy"]), f"accuracy {res.report.accuracy:.2f} below threshold")
    _echo(out, "train", {"rng_seed": seed}, r, {"train": tcfg.to_dict(), "model": mspec.to_dict(), "split": spec.to_dict()})
    return 0


def cmd_eval(args, cfg, out: Path) -> int:
    from .dataio import load_clips
    from .learn import evaluate, load_checkpoint, nearest_centroid

    r = _resolve(args, cfg, {"store": None, "checkpoint": None, "baseline": False, "min_accuracy": None, **_SPLIT_ARGS})
    if r["store"] is None or not Path(r["store"]).exists():
        raise FileNotFoundError(f"clip store not found: {r['store']}")
    seed = args.seed if args.seed is not None else int(cfg.get("rng_seed", 0))
    clips = [c for c in load_clips(r["store"]) if c.label is not None]
    spec, parts = _load_split(clips, cfg, r, seed)
    if not parts[2]:
        raise ConfigError("split leaves the test set empty")
    if r["checkpoint"] is None:
        raise ConfigError("eval needs --checkpoint")
    model = load_checkpoint(r["checkpoint"])
    rep = evaluate(model, parts[2])
    _write_report(out, rep, "eval_report")
    if r["baseline"]:
        base = nearest_centroid(parts[0], parts[2])
        base.to_json(out / "baseline_report.json")
        print(base.table_row("nearest-centroid"))
    if args.check:
        _check_split(spec, parts)
        _check_report(rep)
        if r["min_accuracy"] is not None:
            _check(rep.accuracy >= float(r["min_accuracy"]), f"accuracy {rep.accuracy:.2f} below threshold")
    _echo(out, "eval", {"rng_seed": seed}, r, {"split": spec.to_dict()})
    return 0


def cmd_export_figure(args, cfg, out: Path) -> int:
    from .pipeline import rd_stream
    from .rdpipe import write_csv, write_pgm
    from .scenario import load_archive

    r = _resolve(args, cfg, {"archive": None, "stream": 0, "kind": "rd", "cpi": 0, "mode": "range_filtered=1.0"})
    if r["archive"] is None:
        raise ConfigError("export-figure needs an archive")
    radio, streams = load_archive(r["archive"])
    pcfg = _pipeline_cfg(cfg)
    pcfg = dataclasses.replace(pcfg, radio=radio)
    st = streams[int(r["stream"])]
    if r["kind"] == "rd":
        maps, _ = rd_stream(st["data"], pcfg, args.threads or 1)
        m = maps[int(r["cpi"])]
        base = out / f"{st['name']}_rd_{int(r['cpi']):03d}"
        write_csv(base.with_suffix(".csv"), m.values, m.range_axis, m.velocity_axis)
        write_pgm(base.with_suffix(".pgm"), m.values, 0.0, 40.0, range_m=m.range_axis, velocity_mps=m.velocity_axis)
    elif r["kind"] == "spectrogram":
        mode, thr = _parse_spectrogram(r["mode"])
        base = _export_spectrogram(out, st["name"], st["data"], radio, pcfg, mode, thr)
    else:
        raise ConfigError("--kind must be rd or spectrogram")
    print(f"wrote {base}.csv/.pgm")
    _echo(out, "export-figure", cfg, r, {"pipeline": pcfg.to_dict()})
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config (or an effective_config.json echo)")
    common.add_argument("--out", help="output directory (default: $RDGESTURE_OUT or ./runs)")
    common.add_argument("--seed", type=int, help="global RNG seed")
    common.add_argument("--threads", type=int, help="worker threads (default 1, deterministic)")
    common.add_argument("--check", action="store_true", help="assert post-conditions; exit 3 on failure")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rdgesture", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="render a scenario to a channel archive")
    s.add_argument("scenario", nargs="?")
    s.add_argument("--archive", help="archive file name inside --out")

    s = sub.add_parser("pipeline", parents=[common], help="sync, RD maps, clips (and spectrograms)")
    s.add_argument("archive", nargs="?")
    s.add_argument("--spectrogram", action="append", help="range_filtered=<metres> or off (repeatable)")
    s.add_argument("--figures", action="store_true", default=None, help="export every RD map as PGM")
    s.add_argument("--store", help="clip store file name inside --out")

    s = sub.add_parser("dataset", parents=[common], help="generate the synthetic multi-user corpus")
    s.add_argument("--users", type=int)
    s.add_argument("--reps", type=int)
    s.add_argument("--movers", type=int, help="background movers per clip")
    s.add_argument("--locations", help="location ids assigned round-robin to users, e.g. AB")
    s.add_argument("--store")
    s.add_argument("--source")

    def split_flags(s):
        s.add_argument("--protocol", choices=["in_domain", "leave_one_user_out", "cross_location"])
        s.add_argument("--user", type=int)
        s.add_argument("--train-locations", dest="train_locations", help="comma-separated, e.g. A,B")
        s.add_argument("--test-location", dest="test_location")
        s.add_argument("--split-file", dest="split_file", help="JSON split descriptor")
        s.add_argument("--min-accuracy", dest="min_accuracy", type=float, help="--check threshold")

    s = sub.add_parser("train", parents=[common], help="train the CNN-GRU (best of N runs)")
    s.add_argument("store", nargs="?")
    split_flags(s)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    s.add_argument("store", nargs="?")
    s.add_argument("--checkpoint")
    s.add_argument("--baseline", action="store_true", default=None, help="also run nearest-centroid")
    split_flags(s)

    s = sub.add_parser("export-figure", parents=[common], help="export one RD map or spectrogram")
    s.add_argument("archive", nargs="?")
    s.add_argument("--stream", type=int)
    s.add_argument("--kind", choices=["rd", "spectrogram"])
    s.add_argument("--cpi", type=int)
    s.add_argument("--mode", help="spectrogram mode: range_filtered=<metres> or off")
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "pipeline": cmd_pipeline,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "export-figure": cmd_export_figure,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if cfg.get("command") not in (None, args.command):
            raise ConfigError(f"config echo is for {cfg['command']!r}, not {args.command!r}")
        out = Path(args.out or os.environ.get("RDGESTURE_OUT", "runs"))
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
