"""Command-line interface.

Subcommands: gen-synth, preprocess, train, eval, ablate,
export-embeddings. Every error path exits non-zero with a single
machine-parsable line on stderr of the form ``error: <kind>: <message>``.
Exit codes: 2 for malformed configuration (the offending key is named),
3 for a non-finite training loss, 1 otherwise.
"""

import argparse
import configparser
import sys
from pathlib import Path

from .errors import (
    ChannelError,
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    FilterDesignError,
    MissingViewError,
    NanLossError,
)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        _fail("config", f"{err}" + (f" (key: {err.key})" if err.key else ""))
        return 2
    except NanLossError as err:
        _fail("nan-loss", str(err))
        return 3
    except (ContractError, DimensionError, DomainError, MissingViewError,
            ChannelError, FilterDesignError, CheckpointError) as err:
        _fail(_kind_of(err), str(err))
        return 1
    except OSError as err:
        _fail("io", str(err))
        return 1


def _fail(kind, message):
    print(f"error: {kind}: {message}", file=sys.stderr)


def _kind_of(err):
    return {
        ContractError: "contract",
        DimensionError: "dimension",
        DomainError: "domain",
        MissingViewError: "missing-view",
        ChannelError: "channel",
        FilterDesignError: "filter-design",
        CheckpointError: "checkpoint",
    }.get(type(err), "error")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tmcvae",
        description="Multi-view VAE auditory attention decoding with "
                    "task-related contrastive learning.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate the synthetic benchmark dataset")
    p.add_argument("--config", help="run config path (data section is used)")
    p.add_argument("--seed", type=int, help="override the data seed")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("preprocess", help="run the signal pipeline on raw trials")
    p.add_argument("--config", required=True,
                   help="trial manifest (structured text) describing raw files")
    p.add_argument("--window", type=int, choices=(2, 3), default=3,
                   help="decision window length in seconds")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", help="run config path")
    p.add_argument("--seed", type=int, help="override train seed")
    p.add_argument("--fusion", choices=("poe", "moe", "mopoe"),
                   help="override fusion mode")
    p.add_argument("--tmc", choices=("on", "off"), help="override the TMC term")
    p.add_argument("--out", help="override output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True, help="run output directory")
    p.add_argument("--data", default="",
                   help="dataset container (defaults to the run's own data)")
    p.add_argument("--diagnostic", action="store_true",
                   help="also report label-dependent task-related metrics")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the fusion x TMC comparison grid")
    p.add_argument("--config", help="base run config")
    p.add_argument("--seed", type=int, help="base seed for the grid")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-embeddings", help="export learned representations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    return parser


def _load_config(args):
    from .harness import RunConfig, load_run_config
    if getattr(args, "config", None):
        cfg = load_run_config(args.config)
    else:
        cfg = RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.synth.seed = args.seed
    if getattr(args, "fusion", None):
        cfg.fusion = args.fusion
    if getattr(args, "tmc", None):
        cfg.tmc = args.tmc == "on"
    if getattr(args, "out", None):
        cfg.out = args.out
    return cfg


def cmd_gen_synth(args):
    from .harness import gen_synth_command
    gen_synth_command(_load_config(args))
    return 0


def cmd_train(args):
    from .harness import run_training
    run_training(_load_config(args))
    return 0


def cmd_eval(args):
    from .harness import evaluate_command
    evaluate_command(args.checkpoint, args.data, diagnostic=args.diagnostic)
    return 0


def cmd_ablate(args):
    from .harness import run_ablation
    run_ablation(_load_config(args), seeds=args.seeds)
    return 0


def cmd_export(args):
    from .harness import export_embeddings
    export_embeddings(args.checkpoint, args.data, args.out)
    return 0


def cmd_preprocess(args):
    from . import mvt
    from .dsp import (
        AudioSignal,
        EegRecording,
        eeg_filter_bank,
        paper_overlap_s,
        preprocess_speech,
        segment_windows,
    )
    import csv

    import numpy as np

    manifest = configparser.ConfigParser()
    read = manifest.read(args.config)
    if not read:
        raise ConfigError(f"cannot read trial manifest {args.config!r}", key=None)

    trials = [s for s in manifest.sections() if s.startswith("trial")]
    if not trials:
        raise ConfigError("trial manifest has no [trial*] sections", key=None)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    window_s = args.window
    overlap_s = paper_overlap_s(window_s)

    eeg_feats, s1_feats, s2_feats, labels = [], [], [], []
    index_rows = []
    for section in trials:
        spec = manifest[section]
        for key in spec:
            if key not in ("eeg", "audio1", "audio2", "eeg_rate", "audio_rate",
                           "channels", "label"):
                raise ConfigError(f"unknown trial key {key!r} in [{section}]", key=key)
        try:
            base = Path(args.config).parent
            eeg_raw = mvt.load_tensor(base / spec["eeg"])
            audio1 = mvt.load_tensor(base / spec["audio1"])
            audio2 = mvt.load_tensor(base / spec["audio2"])
            eeg_rate = float(spec["eeg_rate"])
            audio_rate = float(spec["audio_rate"])
            channels = tuple(c.strip() for c in spec["channels"].split(","))
            label = int(spec["label"])
        except KeyError as missing:
            raise ConfigError(
                f"trial [{section}] is missing key {missing}", key=str(missing))

        try:
            recording = EegRecording(eeg_raw, eeg_rate, channels)
            feature = eeg_filter_bank(recording)
            sp1 = preprocess_speech(AudioSignal(audio1, audio_rate))
            sp2 = preprocess_speech(AudioSignal(audio2, audio_rate))
            windows = segment_windows(feature, sp1, sp2, window_s, overlap_s,
                                      label=label, trial_id=section)
        except (ContractError, ChannelError, FilterDesignError) as err:
            raise type(err)(f"trial [{section}]: {err}") from err

        for w in windows:
            index_rows.append((len(index_rows), section, w.start_s, w.label))
            eeg_feats.append(w.eeg)
            s1_feats.append(w.speech1.values[None])
            s2_feats.append(w.speech2.values[None])
            labels.append(w.label)

    arrays = {
        "eeg": np.stack(eeg_feats),
        "s1": np.stack(s1_feats),
        "s2": np.stack(s2_feats),
        "labels": np.asarray(labels, dtype=np.float64),
    }
    mvt.save_container(out_dir / "features.mvt", arrays)
    with open(out_dir / "windows.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("window_id", "trial_id", "start_s", "label"))
        writer.writerows(index_rows)
    print(f"wrote {len(index_rows)} decision windows from {len(trials)} trials")
    return 0


if __name__ == "__main__":
    sys.exit(main())
