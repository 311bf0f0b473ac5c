"""``dcmd`` command line: synth, train, score, eval, plot.

Every config key is also a flag, ``--<section>.<key> VALUE`` (VALUE parsed as
JSON when possible); flags override the config file, which overrides the
preset. Exit codes: 0 ok, 1 usage/config, 2 data, 3 numeric failure.
"""

import argparse
import json
import os
import shutil
import sys
from dataclasses import MISSING, fields, replace
from pathlib import Path

import braintrust
from dotenv import load_dotenv

from data.poses import load_labels, load_tracks, windows_from_tracks, write_labels, write_tracks_json
from data.synth import SynthConfig, synth_generate
from dcmd.checkpoint import checkpoint_digest, load_checkpoint, save_checkpoint
from dcmd.config import (
    PRESETS,
    SECTIONS,
    RunConfig,
    apply_overrides,
    config_hash,
    json_key,
    load_run_config,
    parse_value,
    preset_config,
    section_from_dict,
)
from dcmd.errors import ConfigError, DataError, DcmdError, ShapeError
from dcmd.inference import score_windows, write_window_errors
from dcmd.training import load_trained, train
from evals.plots import emit_plots
from evals.scorers import fuse_clips, read_scores, summarize, write_scores

CHECKPOINT_NAME = "model.dckpt"
TRAIN_LOG_NAME = "train_log.csv"


def say(tag: str, message: str, err: bool = False) -> None:
    print(f"[{tag}] {message}", file=sys.stderr if err else sys.stdout, flush=True)


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with 1 rather than argparse's 2 (2 means bad data here)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Flags generated from the config dataclasses
# ---------------------------------------------------------------------------


def _default_text(f) -> str:
    if f.default is not MISSING:
        value = f.default
    elif f.default_factory is not MISSING:
        value = f.default_factory()
    else:
        return "required"
    if isinstance(value, tuple):
        value = [list(v) if isinstance(v, tuple) else v for v in value]
    return json.dumps(value)


def add_section_flags(parser: argparse.ArgumentParser, section: str, cls) -> None:
    group = parser.add_argument_group(f"{section} settings")
    for f in fields(cls):
        key = json_key(f)
        group.add_argument(
            f"--{section}.{key}",
            dest=f"{section}.{key}",
            metavar="VALUE",
            type=parse_value,
            default=argparse.SUPPRESS,
            help=f"(default: {_default_text(f)})",
        )


def add_config_flags(parser: argparse.ArgumentParser, sections=tuple(SECTIONS)) -> None:
    for section in sections:
        add_section_flags(parser, section, SECTIONS[section])
    parser.add_argument("--output_dir", dest="output_dir", metavar="DIR", default=argparse.SUPPRESS,
                        help='(default: "runs/dcmd")')


def flag_overrides(args: argparse.Namespace, prefix: str | None = None) -> dict:
    out = {}
    for key, value in vars(args).items():
        if key == "output_dir" and prefix is None:
            out[key] = value
        elif "." in key and (prefix is None or key.startswith(prefix + ".")):
            out[key] = value
    return out


def build_run_config(args: argparse.Namespace, base: RunConfig | None = None) -> RunConfig:
    """Preset, then config file (or ``base``), then flags; derived fields not yet filled."""
    if getattr(args, "config", None):
        cfg = load_run_config(args.config, args.preset)
    elif base is not None:
        cfg = base
    else:
        cfg = preset_config(args.preset)
    cfg = apply_overrides(cfg, flag_overrides(args))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    return cfg


def resolve_run_config(args: argparse.Namespace, base: RunConfig | None = None) -> RunConfig:
    return build_run_config(args, base).resolved()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}:{e.lineno}: invalid JSON: {e.msg}") from e
        doc = doc.get("synth", doc)
    doc.update({key.partition(".")[2]: value for key, value in flag_overrides(args, "synth").items()})
    cfg = section_from_dict(SynthConfig, doc, "synth")
    cfg.validate()

    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise ConfigError(f"refusing to write into non-empty {out} (use --force)")
        shutil.rmtree(out / "tracks", ignore_errors=True)
    tracks, labels = synth_generate(cfg, args.seed)
    write_tracks_json(out / "tracks", tracks)
    write_labels(out / "labels.csv", labels)
    (out / "synth.json").write_text(json.dumps({"seed": args.seed, "synth": vars(cfg)}, indent=2, sort_keys=True) + "\n")
    n_anomalous = sum(int(s.labels.sum()) for s in labels.values())
    say("synth", f"{len(tracks)} tracks in {len(labels)} clips, {n_anomalous} anomalous frames -> {out}")
    return 0


def cmd_train(args) -> int:
    resume = load_checkpoint(args.resume) if args.resume else None
    cfg = resolve_run_config(args, base=resume.run_config() if resume else None)
    if not cfg.data.train:
        raise ConfigError("data.train is not set (config file or --data.train)")
    t = cfg.train
    say("train", f"lambda={t.lam} T={t.steps} beta1={t.beta1} betaT={t.beta_t} lr={t.lr} "
                 f"epochs={t.epochs} batch={t.batch_size} seed={t.seed} config={config_hash(cfg)}")

    loaded = load_tracks(cfg.data.train, cfg.data.format)
    if loaded.n_dropped:
        say("train", f"dropped {loaded.n_dropped} incomplete track(s)")
    w = cfg.window
    windows = windows_from_tracks(loaded.tracks, w.history, w.future, w.stride)
    if not windows:
        raise DataError(f"no {w.length}-frame windows in {cfg.data.train}")
    say("train", f"{len(windows)} windows from {len(loaded.tracks)} tracks"
                 + (f", resuming at epoch {resume.epoch}" if resume else ""))

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    def report(row):
        say("train", f"epoch {row['epoch']}/{t.epochs} loss={row['loss_total']:.5f} rec={row['loss_rec']:.5f} "
                     f"pred={row['loss_pred']:.5f} uad={row['uad_norm']:.5f} lr={row['lr']:.2e}")

    ckpt = train(windows, cfg, resume=resume, log_path=out / TRAIN_LOG_NAME, on_epoch=report)
    path = save_checkpoint(ckpt, out / CHECKPOINT_NAME)
    say("train", f"checkpoint {path} sha256={checkpoint_digest(path)}")
    return 0


def cmd_score(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    trained = ckpt.run_config()
    cfg = build_run_config(args, base=trained)
    layout = ("history", "future", "joints", "coords")
    if any(getattr(cfg.window, k) != getattr(trained.window, k) for k in layout):
        raise ShapeError(
            f"window layout H={cfg.window.history} F={cfg.window.future} J={cfg.window.joints} does not match "
            f"the checkpoint's H={trained.window.history} F={trained.window.future} J={trained.window.joints}"
        )
    cfg = cfg.resolved()
    data_path = args.data or cfg.data.test
    if not data_path:
        raise ConfigError("no data to score (--data or data.test)")
    labels_path = args.labels or cfg.data.labels
    fmt = args.format or cfg.data.format

    model = load_trained(ckpt)
    loaded = load_tracks(data_path, fmt)
    w = cfg.window
    windows = windows_from_tracks(loaded.tracks, w.history, w.future, w.test_stride)
    say("score", f"{len(windows)} windows from {len(loaded.tracks)} tracks ({loaded.n_dropped} dropped)")
    errors = score_windows(model, windows, cfg.scoring, cfg.train.seed)

    labels = load_labels(labels_path) if labels_path else None
    lengths = {}
    for track in loaded.tracks:
        lengths[track.clip_id] = max(lengths.get(track.clip_id, 0), int(track.frame_indices[-1]) + 1)
    for clip_id, label_set in (labels or {}).items():
        lengths[clip_id] = label_set.n_frames
    series = fuse_clips(errors, cfg.scoring, labels, clip_lengths=lengths)

    out = Path(args.out)
    write_window_errors(out / "windows.csv", errors)
    write_scores(out / "scores.csv", series)
    meta = {
        "dataset": args.dataset or Path(data_path).name,
        "config_hash": config_hash(cfg),
        "checkpoint_sha256": checkpoint_digest(args.checkpoint),
        "n_windows": len(errors),
        "n_frames": int(sum(len(s) for s in series.values())),
        "uncovered_frames": int(sum(len(s.uncovered) for s in series.values())),
        "dropped_tracks": loaded.dropped,
    }
    (out / "scores.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    say("score", f"wrote {out / 'scores.csv'} ({meta['n_frames']} frames, {meta['uncovered_frames']} uncovered)")
    return 0


def cmd_eval(args) -> int:
    scores_path = Path(args.scores)
    labels = load_labels(args.labels) if args.labels else None
    series = read_scores(scores_path, labels)
    meta_path = scores_path.with_suffix(".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    dataset = args.dataset or meta.get("dataset") or scores_path.parent.name
    summary = summarize(series, dataset, meta.get("config_hash"))
    print(json.dumps(summary, sort_keys=True), flush=True)
    return 0


def cmd_plot(args) -> int:
    labels = load_labels(args.labels) if args.labels else None
    series = read_scores(args.scores, labels)
    paths = emit_plots(series, args.out)
    say("plot", f"{len(paths)} plot(s) -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="dcmd", description="Dual conditioned motion diffusion for pose-based anomaly detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic skeleton dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON with synth settings (optionally under a 'synth' key)")
    p.add_argument("--force", action="store_true", help="write into a non-empty directory")
    add_section_flags(p, "synth", SynthConfig)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on normal motion and write a checkpoint")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--preset", choices=sorted(PRESETS), default="full")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--seed", type=int, default=None, help="overrides train.seed")
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score test tracks with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="tracks file or directory (default: data.test)")
    p.add_argument("--format", choices=("native-json", "trajectory-csv"), default=None)
    p.add_argument("--labels", help="labels CSV (default: data.labels)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dataset", help="dataset name recorded in the metadata")
    p.add_argument("--config", help="run config JSON; its window must match the checkpoint")
    p.add_argument("--preset", choices=sorted(PRESETS), default="full")
    p.add_argument("--seed", type=int, default=None, help="sampling seed (default: train.seed)")
    add_config_flags(p, sections=("window", "scoring", "data"))
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="frame-level ROC-AUC of a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", help="labels CSV (default: the score file's label column)")
    p.add_argument("--dataset", help="dataset name for the summary")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="score curves with labeled regions shaded")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    if os.environ.get("BRAINTRUST_API_KEY"):
        braintrust.init_logger(project=os.environ.get("DCMD_PROJECT", "dcmd"))
    try:
        return args.func(args)
    except DcmdError as e:
        say(args.command, f"error: {e}", err=True)
        return e.exit_code
    except OSError as e:
        say(args.command, f"error: {e}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
