"""Experiment harness: run configuration, the training loop, evaluation
with diagnostics, the fusion/TMC ablation grid, and embedding export.

Runs are deterministic given (seed, config, data): metrics CSV bytes are
identical across reruns. Wall-clock timings are printed to stdout and
never written into the CSV for that reason.
"""

import configparser
import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import mvt
from .autodiff import Adam
from .errors import CheckpointError, ConfigError, ContractError, NanLossError
from .losses import cosine_similarity
from .model import (
    ModelConfig,
    MultiViewBatch,
    MultiViewVAE,
    default_vector_decoder,
    default_vector_encoder,
    paper_arch_config,
)
from .synth import SynthConfig, SynthDataset, generate, split


def run_label(fusion, tmc_enabled):
    """Machine-readable run tag; the no-TMC run names itself a baseline."""
    if tmc_enabled:
        return "tmc-vae" if fusion == "mopoe" else f"{fusion}+tmc"
    return f"{fusion}-vae-baseline"


def table_tag(fusion, tmc_enabled):
    """Human-facing tags used in the ablation table."""
    base = {"poe": "MVAE", "moe": "MMVAE", "mopoe": "MoPoE-VAE"}[fusion]
    if not tmc_enabled:
        return base
    return "TMC-VAE" if fusion == "mopoe" else base + "+TMC"


@dataclass
class MetricsRecord:
    epoch: int
    split: str
    recon_eeg: float
    recon_s1: float
    recon_s2: float
    recon_total: float
    kl: float
    bce: float
    tmc: float
    total: float
    accuracy: float
    similarity: float
    label: str
    wall_clock_s: float = field(default=0.0)  # printed, never serialized

    CSV_FIELDS = ("epoch", "split", "recon_eeg", "recon_s1", "recon_s2",
                  "recon_total", "kl", "bce", "tmc", "total", "accuracy",
                  "similarity", "label")

    def csv_row(self):
        vals = []
        for name in self.CSV_FIELDS:
            v = getattr(self, name)
            vals.append(v if isinstance(v, str) else _fmt(v))
        return vals


def _fmt(x):
    return f"{float(x):.10g}"


def write_metrics_csv(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MetricsRecord.CSV_FIELDS)
        for r in records:
            writer.writerow(r.csv_row())


# -- run configuration -------------------------------------------------------

_DATA_KEYS = {"source", "path", "latent_dim_true", "eeg_dim", "speech_dim",
              "noise_std", "eeg_noise_std", "n_samples", "balance", "seed",
              "train_fraction", "val_fraction", "test_fraction"}
_MODEL_KEYS = {"latent_dim", "fusion", "tmc", "alpha", "beta", "temperature",
               "hidden_dim", "classifier_hidden", "common_dim",
               "tie_speech_heads", "infonce_denominator", "preset"}
_TRAIN_KEYS = {"epochs", "batch_size", "learning_rate", "seed", "patience",
               "restore_best", "out"}


@dataclass
class RunConfig:
    """Everything one training run needs; parsed from key = value text."""

    data_source: str = "synth"
    data_path: str = ""
    synth: SynthConfig = None
    fractions: tuple = (0.8, 0.1, 0.1)
    latent_dim: int = 128
    fusion: str = "mopoe"
    tmc: bool = True
    alpha: float = 1.0
    beta: float = 1.0
    temperature: float = 1.5
    hidden_dim: int = 64
    common_dim: int = 64
    classifier_hidden: tuple = (64, 32)
    tie_speech_heads: bool = False
    infonce_denominator: bool = False
    preset: str = "vector"
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    patience: int = 10
    restore_best: bool = True
    out: str = "runs/run"

    def __post_init__(self):
        if self.synth is None:
            self.synth = SynthConfig()
        if self.batch_size < 2:
            raise ConfigError("train.batch_size must be >= 2", key="batch_size")

    @property
    def label(self):
        return run_label(self.fusion, self.tmc)


def _parse_bool(value, key):
    v = value.strip().lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"expected on/off for {key!r}, got {value!r}", key=key)


def parse_run_config(text):
    """Parse and strictly validate a run configuration; unknown keys are
    rejected with the offending key named."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"unparseable config: {err}", key=None) from err

    known = {"data": _DATA_KEYS, "model": _MODEL_KEYS, "train": _TRAIN_KEYS}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown config section {section!r}", key=section)
        for key in parser[section]:
            if key not in known[section]:
                raise ConfigError(
                    f"unknown config key {key!r} in section [{section}]", key=key)

    cfg = RunConfig()
    d = parser["data"] if parser.has_section("data") else {}
    cfg.data_source = d.get("source", "synth")
    if cfg.data_source not in ("synth", "preprocessed"):
        raise ConfigError(f"data.source must be synth or preprocessed", key="source")
    cfg.data_path = d.get("path", "")
    try:
        cfg.synth = SynthConfig(
            latent_dim_true=int(d.get("latent_dim_true", 8)),
            eeg_dim=int(d.get("eeg_dim", 40)),
            speech_dim=int(d.get("speech_dim", 60)),
            noise_std=float(d.get("noise_std", 0.3)),
            eeg_noise_std=(float(d["eeg_noise_std"])
                           if "eeg_noise_std" in d else None),
            n_samples=int(d.get("n_samples", 6000)),
            balance=float(d.get("balance", 0.5)),
            seed=int(d.get("seed", 0)),
        )
        cfg.fractions = (float(d.get("train_fraction", 0.8)),
                         float(d.get("val_fraction", 0.1)),
                         float(d.get("test_fraction", 0.1)))

        m = parser["model"] if parser.has_section("model") else {}
        cfg.latent_dim = int(m.get("latent_dim", 128))
        cfg.fusion = m.get("fusion", "mopoe")
        if cfg.fusion not in ("poe", "moe", "mopoe"):
            raise ConfigError(f"model.fusion must be poe/moe/mopoe", key="fusion")
        cfg.tmc = _parse_bool(m.get("tmc", "on"), "tmc")
        cfg.alpha = float(m.get("alpha", 1.0))
        cfg.beta = float(m.get("beta", 1.0))
        cfg.temperature = float(m.get("temperature", 1.5))
        cfg.hidden_dim = int(m.get("hidden_dim", 64))
        cfg.common_dim = int(m.get("common_dim", 64))
        cfg.classifier_hidden = tuple(
            int(x) for x in m.get("classifier_hidden", "64,32").split(","))
        cfg.tie_speech_heads = _parse_bool(m.get("tie_speech_heads", "off"),
                                           "tie_speech_heads")
        cfg.infonce_denominator = _parse_bool(m.get("infonce_denominator", "off"),
                                              "infonce_denominator")
        cfg.preset = m.get("preset", "vector")
        if cfg.preset not in ("vector", "paper-arch"):
            raise ConfigError("model.preset must be vector or paper-arch", key="preset")

        t = parser["train"] if parser.has_section("train") else {}
        cfg.epochs = int(t.get("epochs", 30))
        cfg.batch_size = int(t.get("batch_size", 128))
        cfg.learning_rate = float(t.get("learning_rate", 1e-3))
        cfg.seed = int(t.get("seed", 0))
        cfg.patience = int(t.get("patience", 10))
        cfg.restore_best = _parse_bool(t.get("restore_best", "on"), "restore_best")
        cfg.out = t.get("out", "runs/run")
    except ValueError as err:
        raise ConfigError(f"bad config value: {err}", key=None) from err
    return cfg


def load_run_config(path):
    return parse_run_config(Path(path).read_text())


def model_config_from_run(cfg, eeg_shape, speech_shape):
    beta = cfg.beta if cfg.tmc else 0.0
    if cfg.preset == "paper-arch":
        return paper_arch_config(
            latent_dim=cfg.latent_dim,
            fusion_mode=cfg.fusion,
            classifier_hidden=cfg.classifier_hidden,
            common_dim=cfg.common_dim,
            alpha=cfg.alpha, beta=beta, temperature=cfg.temperature,
            tmc_enabled=cfg.tmc,
            tie_speech_heads=cfg.tie_speech_heads,
            infonce_denominator=cfg.infonce_denominator,
        )
    h = cfg.hidden_dim
    return ModelConfig(
        latent_dim=cfg.latent_dim,
        fusion_mode=cfg.fusion,
        eeg_shape=tuple(eeg_shape),
        speech_shape=tuple(speech_shape),
        eeg_encoder=default_vector_encoder(h),
        speech_encoder=default_vector_encoder(h),
        eeg_decoder=default_vector_decoder(tuple(eeg_shape), h),
        speech_decoder=default_vector_decoder(tuple(speech_shape), h),
        classifier_hidden=cfg.classifier_hidden,
        common_dim=cfg.common_dim,
        alpha=cfg.alpha, beta=cfg.beta if cfg.tmc else 0.0,
        temperature=cfg.temperature,
        tmc_enabled=cfg.tmc,
        tie_speech_heads=cfg.tie_speech_heads,
        infonce_denominator=cfg.infonce_denominator,
    )


# -- data handling -----------------------------------------------------------

def dataset_to_batch(ds):
    return MultiViewBatch(eeg=ds.eeg, s1=ds.s1, s2=ds.s2, labels=ds.labels)


def save_dataset(out_dir, name, ds):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return mvt.save_container(out_dir / f"{name}.mvt", ds.arrays())


def load_dataset(path):
    arrays = mvt.load_container(path)
    return SynthDataset(
        eeg=arrays["eeg"], s1=arrays["s1"], s2=arrays["s2"],
        labels=arrays["labels"].astype(np.int64),
        z_true=arrays.get("z_true"), z_distract=arrays.get("z_distract"))


def prepare_data(cfg):
    """Generate (or load) the train/val/test splits for a run.

    A preprocessed path may hold either ready-made train/val/test
    containers or a single ``features.mvt`` (the preprocessing command's
    output), which is then split by the run's fractions and seed.
    """
    if cfg.data_source == "synth":
        data = generate(cfg.synth)
        return split(data, cfg.fractions, seed=cfg.synth.seed)
    base = Path(cfg.data_path)
    if (base / "train.mvt").exists():
        return tuple(load_dataset(base / f"{name}.mvt")
                     for name in ("train", "val", "test"))
    if (base / "features.mvt").exists():
        data = load_dataset(base / "features.mvt")
        return split(data, cfg.fractions, seed=cfg.seed)
    raise ConfigError(f"no dataset containers under {base}", key="path")


# -- training ----------------------------------------------------------------

def iter_batches(batch, batch_size, rng):
    n = len(batch)
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if len(idx) < 2:
            continue  # contrastive negatives need at least two samples
        yield MultiViewBatch(
            eeg=batch.eeg[idx], s1=batch.s1[idx], s2=batch.s2[idx],
            labels=None if batch.labels is None else batch.labels[idx])


def train_model(config, train_batch, epochs, batch_size, learning_rate, seed,
                val_batch=None, patience=None, label="run", collect=None,
                restore_best=True):
    """Train a fresh model; returns (model, per-epoch metrics records).

    With a validation batch the best-accuracy parameter state is restored
    at the end (``restore_best`` off keeps the final-epoch parameters, for
    fixed-budget comparisons), and training stops early once ``patience``
    epochs pass without improvement.
    """
    model = MultiViewVAE(config, seed=seed)
    opt = Adam(model.parameters(), lr=learning_rate)
    rng = np.random.default_rng(seed + 1)

    history = []
    best_acc = -1.0
    best_state = None
    stale = 0
    for epoch in range(epochs):
        t0 = time.time()
        sums = np.zeros(7)
        n_batches = 0
        for bi, bb in enumerate(iter_batches(train_batch, batch_size, rng)):
            _, breakdown = model.forward_train(bb, rng)
            if not np.isfinite(breakdown.total):
                raise NanLossError(epoch, bi)
            opt.zero_grad()
            breakdown.node.backward()
            opt.step()
            sums += (*breakdown.recon_per_view, breakdown.recon_total,
                     breakdown.kl, breakdown.bce, breakdown.tmc)
            n_batches += 1
        means = sums / max(n_batches, 1)
        total = -(means[3] - means[4]) + config.alpha * means[5] + config.beta * means[6]
        record = MetricsRecord(
            epoch=epoch, split="train",
            recon_eeg=means[0], recon_s1=means[1], recon_s2=means[2],
            recon_total=means[3], kl=means[4], bce=means[5], tmc=means[6],
            total=total, accuracy=float("nan"), similarity=float("nan"),
            label=label, wall_clock_s=time.time() - t0)
        history.append(record)
        if collect is not None:
            collect(record)

        if val_batch is not None:
            val_record = evaluate_split(model, val_batch, epoch, "val", label,
                                        seed=seed)
            history.append(val_record)
            if collect is not None:
                collect(val_record)
            # ties keep the latest state: among equally accurate
            # checkpoints, prefer the most-trained representations
            if val_record.accuracy >= best_acc:
                if val_record.accuracy > best_acc:
                    stale = 0
                best_acc = val_record.accuracy
                best_state = model.state_arrays()
            else:
                stale += 1
                if patience is not None and stale > patience:
                    break

    if restore_best and best_state is not None:
        model.load_state_arrays(best_state)
    return model, history


def evaluate_split(model, batch, epoch, split_name, label, seed=0):
    """Deterministic evaluation: accuracy from posterior-mean predictions
    and the representation-similarity diagnostic from seeded samples."""
    acc = float("nan")
    sim = float("nan")
    if batch.labels is not None:
        acc = float(np.mean(model.predict(batch) == batch.labels))
        sim = representation_similarity(model, batch, seed=seed)
    return MetricsRecord(
        epoch=epoch, split=split_name,
        recon_eeg=float("nan"), recon_s1=float("nan"), recon_s2=float("nan"),
        recon_total=float("nan"), kl=float("nan"), bce=float("nan"),
        tmc=float("nan"), total=float("nan"),
        accuracy=acc, similarity=sim, label=label)


def representation_similarity(model, batch, seed=0):
    """Mean cosine between per-sample complete and task-related
    representations, drawn with independent seeded noise (the deterministic
    analog of the similarity reported alongside accuracy)."""
    rng = np.random.default_rng(1_000_003 + seed)
    z_c, z_t = model.representations(batch, rng=rng)
    if z_t is None:
        raise ContractError("similarity diagnostic needs labels")
    return float(np.mean([cosine_similarity(a, b) for a, b in zip(z_c, z_t)]))


# -- checkpointing -----------------------------------------------------------

def save_checkpoint(out_dir, model, run_cfg):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mvt.save_container(out_dir / "checkpoint.mvt", model.state_arrays())
    (out_dir / "checkpoint.ini").write_text(render_run_config(run_cfg))


def load_checkpoint(out_dir):
    out_dir = Path(out_dir)
    ini = out_dir / "checkpoint.ini"
    if not ini.exists():
        raise CheckpointError(f"no checkpoint.ini under {out_dir}")
    cfg = parse_run_config(ini.read_text())
    arrays = mvt.load_container(out_dir / "checkpoint.mvt")
    if cfg.preset == "paper-arch":
        model_cfg = model_config_from_run(cfg, None, None)
    else:
        eeg_dim = arrays["decoder.eeg.2.b"].shape[-1]
        speech_dim = arrays["decoder.speech.2.b"].shape[-1]
        model_cfg = model_config_from_run(cfg, (eeg_dim,), (speech_dim,))
    model = MultiViewVAE(model_cfg, seed=cfg.seed)
    model.load_state_arrays(arrays)
    return model, cfg


def render_run_config(cfg):
    s = cfg.synth
    lines = [
        "[data]",
        f"source = {cfg.data_source}",
        f"path = {cfg.data_path}",
        f"latent_dim_true = {s.latent_dim_true}",
        f"eeg_dim = {s.eeg_dim}",
        f"speech_dim = {s.speech_dim}",
        f"noise_std = {_fmt(s.noise_std)}",
        f"eeg_noise_std = {_fmt(s.eeg_noise_std)}",
        f"n_samples = {s.n_samples}",
        f"balance = {_fmt(s.balance)}",
        f"seed = {s.seed}",
        f"train_fraction = {_fmt(cfg.fractions[0])}",
        f"val_fraction = {_fmt(cfg.fractions[1])}",
        f"test_fraction = {_fmt(cfg.fractions[2])}",
        "",
        "[model]",
        f"latent_dim = {cfg.latent_dim}",
        f"fusion = {cfg.fusion}",
        f"tmc = {'on' if cfg.tmc else 'off'}",
        f"alpha = {_fmt(cfg.alpha)}",
        f"beta = {_fmt(cfg.beta)}",
        f"temperature = {_fmt(cfg.temperature)}",
        f"hidden_dim = {cfg.hidden_dim}",
        f"common_dim = {cfg.common_dim}",
        f"classifier_hidden = {','.join(str(x) for x in cfg.classifier_hidden)}",
        f"tie_speech_heads = {'on' if cfg.tie_speech_heads else 'off'}",
        f"infonce_denominator = {'on' if cfg.infonce_denominator else 'off'}",
        f"preset = {cfg.preset}",
        "",
        "[train]",
        f"epochs = {cfg.epochs}",
        f"batch_size = {cfg.batch_size}",
        f"learning_rate = {_fmt(cfg.learning_rate)}",
        f"seed = {cfg.seed}",
        f"patience = {cfg.patience}",
        f"restore_best = {'on' if cfg.restore_best else 'off'}",
        f"out = {cfg.out}",
        "",
    ]
    return "\n".join(lines)


# -- top-level commands ------------------------------------------------------

def run_training(cfg, echo=print):
    """Full training command: data, loop, best-val checkpoint, metrics CSV,
    final test metrics."""
    train, val, test = prepare_data(cfg)
    tr_b, va_b, te_b = (dataset_to_batch(d) for d in (train, val, test))
    model_cfg = model_config_from_run(cfg, train.eeg.shape[1:], train.s1.shape[1:])

    t0 = time.time()
    model, history = train_model(
        model_cfg, tr_b, epochs=cfg.epochs, batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate, seed=cfg.seed, val_batch=va_b,
        patience=cfg.patience, label=cfg.label, restore_best=cfg.restore_best)
    elapsed = time.time() - t0

    test_record = evaluate_split(model, te_b, epoch=-1, split_name="test",
                                 label=cfg.label, seed=cfg.seed)
    history.append(test_record)

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out_dir / "metrics.csv", history)
    save_checkpoint(out_dir, model, cfg)

    echo(f"run {cfg.label}: test accuracy {test_record.accuracy:.4f}, "
         f"similarity {test_record.similarity:.4f}, wall-clock {elapsed:.1f}s")
    return model, history, test_record


def evaluate_command(checkpoint_dir, data_path, diagnostic=False, echo=print):
    """Window-level accuracy from the checkpointed model; the diagnostic
    flag adds the label-dependent task-related metrics."""
    model, cfg = load_checkpoint(checkpoint_dir)
    if data_path:
        test = load_dataset(Path(data_path))
        train_ds = None
        base = Path(data_path).parent
        if (base / "train.mvt").exists():
            train_ds = load_dataset(base / "train.mvt")
    else:
        train_ds, _, test = prepare_data(cfg)
    te_b = dataset_to_batch(test)

    out = {"accuracy": float(np.mean(model.predict(te_b) == test.labels))}
    if diagnostic:
        out["similarity"] = representation_similarity(model, te_b, seed=cfg.seed)
        out.update(task_related_diagnostic(model, train_ds, test))
    for k, v in out.items():
        echo(f"{k} = {v:.6f}" if isinstance(v, float) else f"{k} = {v}")
    return out


def task_related_diagnostic(model, train_ds, test_ds):
    """Classify task-related representations using the labels.

    Reports the model classifier's accuracy on the task-related posterior
    mean and, when a training split is available, a held-out probe (small
    MLP) trained on the training split's task-related representations.
    """
    from sklearn.neural_network import MLPClassifier

    from .autodiff import Tensor

    te_b = dataset_to_batch(test_ds)
    _, zt_test = model.representations(te_b)
    p = model.classify(Tensor(zt_test)).data
    predicted = np.where(p >= 0.5, 0, 1)
    out = {"zt_model_accuracy": float(np.mean(predicted == test_ds.labels))}

    if train_ds is not None:
        tr_b = dataset_to_batch(train_ds)
        _, zt_train = model.representations(tr_b)
        probe = MLPClassifier(hidden_layer_sizes=(32,), max_iter=600,
                              random_state=0)
        probe.fit(zt_train, train_ds.labels)
        out["zt_probe_accuracy"] = float(probe.score(zt_test, test_ds.labels))
    return out


def one_tailed_t_test(greater, lesser):
    """Unpaired one-tailed t-test that ``greater`` exceeds ``lesser``."""
    result = stats.ttest_ind(greater, lesser, alternative="greater")
    return float(result.statistic), float(result.pvalue)


def run_ablation(cfg, seeds=5, echo=print):
    """The 3 fusion modes x {TMC on, off} grid over shared seeds.

    Every cell within a seed trains on the identical synthetic dataset
    (hash-verified). Emits per-seed rows, the aggregated 6-row table, and
    one-tailed significance tests of the TMC runs over their baselines.
    """
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_list = [cfg.seed + i for i in range(seeds)]
    per_seed = []

    for seed in seed_list:
        synth_cfg = SynthConfig(**{**cfg.synth.__dict__, "seed": seed})
        data = generate(synth_cfg)
        data_hash = _dataset_hash(data)
        train, val, test = split(data, cfg.fractions, seed=seed)
        tr_b, va_b, te_b = (dataset_to_batch(d) for d in (train, val, test))

        for fusion in ("poe", "moe", "mopoe"):
            for tmc_on in (False, True):
                run_cfg_cell = RunConfig(**{
                    **{k: getattr(cfg, k) for k in (
                        "data_source", "data_path", "fractions", "latent_dim",
                        "alpha", "beta", "temperature", "hidden_dim", "common_dim",
                        "classifier_hidden", "tie_speech_heads",
                        "infonce_denominator", "preset", "epochs", "batch_size",
                        "learning_rate", "patience", "restore_best", "out")},
                    "fusion": fusion, "tmc": tmc_on, "seed": seed,
                    "synth": synth_cfg,
                })
                model_cfg = model_config_from_run(
                    run_cfg_cell, train.eeg.shape[1:], train.s1.shape[1:])
                t0 = time.time()
                model, _ = train_model(
                    model_cfg, tr_b, epochs=cfg.epochs, batch_size=cfg.batch_size,
                    learning_rate=cfg.learning_rate, seed=seed, val_batch=va_b,
                    patience=cfg.patience, label=run_cfg_cell.label,
                    restore_best=cfg.restore_best)
                acc = float(np.mean(model.predict(te_b) == test.labels))
                sim = representation_similarity(model, te_b, seed=seed)
                per_seed.append({
                    "seed": seed, "fusion": fusion,
                    "tmc": "on" if tmc_on else "off",
                    "tag": table_tag(fusion, tmc_on),
                    "accuracy": acc, "similarity": sim,
                    "data_sha256": data_hash,
                })
                echo(f"seed {seed} {table_tag(fusion, tmc_on):10s}: "
                     f"acc {acc:.4f}, sim {sim:.4f} ({time.time() - t0:.0f}s)")

    _write_rows(out_dir / "ablation_per_seed.csv",
                ("seed", "fusion", "tmc", "tag", "accuracy", "similarity",
                 "data_sha256"), per_seed)

    table = []
    for fusion in ("poe", "moe", "mopoe"):
        for tmc_on in (False, True):
            cells = [r for r in per_seed
                     if r["fusion"] == fusion and (r["tmc"] == "on") == tmc_on]
            table.append({
                "tag": table_tag(fusion, tmc_on),
                "fusion": fusion,
                "tmc": "on" if tmc_on else "off",
                "accuracy": float(np.mean([c["accuracy"] for c in cells])),
                "similarity": float(np.mean([c["similarity"] for c in cells])),
            })
    _write_rows(out_dir / "ablation.csv",
                ("tag", "fusion", "tmc", "accuracy", "similarity"), table)

    significance = []
    for fusion in ("poe", "moe", "mopoe"):
        on = [r for r in per_seed if r["fusion"] == fusion and r["tmc"] == "on"]
        off = [r for r in per_seed if r["fusion"] == fusion and r["tmc"] == "off"]
        acc_t, acc_p = one_tailed_t_test([r["accuracy"] for r in on],
                                         [r["accuracy"] for r in off])
        sim_t, sim_p = one_tailed_t_test([r["similarity"] for r in on],
                                         [r["similarity"] for r in off])
        significance.append({
            "fusion": fusion, "accuracy_t": acc_t, "accuracy_p": acc_p,
            "similarity_t": sim_t, "similarity_p": sim_p,
        })
    _write_rows(out_dir / "ablation_significance.csv",
                ("fusion", "accuracy_t", "accuracy_p", "similarity_t",
                 "similarity_p"), significance)
    return per_seed, table, significance


def _dataset_hash(data):
    import hashlib
    h = hashlib.sha256()
    for arr in (data.eeg, data.s1, data.s2, data.labels):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def _write_rows(path, fields, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([row[f] if isinstance(row[f], str) else _fmt(row[f])
                             if isinstance(row[f], float) else row[f]
                             for f in fields])


def export_embeddings(checkpoint_dir, data_path, out_dir, echo=print):
    """Write complete (and, with labels, task-related) representation
    means plus an index CSV of (sample_id, kind, label)."""
    model, cfg = load_checkpoint(checkpoint_dir)
    if data_path:
        ds = load_dataset(Path(data_path))
    else:
        _, _, ds = prepare_data(cfg)
    batch = dataset_to_batch(ds)
    z_c, z_t = model.representations(batch)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    blocks = [z_c]
    for i in range(len(ds)):
        rows.append({"sample_id": i, "kind": "complete",
                     "label": int(ds.labels[i]) if ds.labels is not None else -1})
    if z_t is not None:
        blocks.append(z_t)
        for i in range(len(ds)):
            rows.append({"sample_id": i, "kind": "task_related",
                         "label": int(ds.labels[i])})
    embeddings = np.concatenate(blocks, axis=0)
    mvt.save_container(out_dir / "embeddings.mvt", {"embeddings": embeddings})
    _write_rows(out_dir / "embeddings.csv", ("sample_id", "kind", "label"), rows)
    echo(f"exported {embeddings.shape[0]} x {embeddings.shape[1]} embeddings")
    return embeddings, rows


def gen_synth_command(cfg, echo=print):
    """Generate the synthetic dataset files and split containers."""
    data = generate(cfg.synth)
    train, val, test = split(data, cfg.fractions, seed=cfg.synth.seed)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    digests = {}
    for name, ds in (("train", train), ("val", val), ("test", test)):
        digests[name] = save_dataset(out_dir, name, ds)
    (out_dir / "dataset.manifest").write_text(
        "[dataset]\n"
        f"n_samples = {len(data)}\n"
        f"seed = {cfg.synth.seed}\n"
        f"train = {len(train)}\n"
        f"val = {len(val)}\n"
        f"test = {len(test)}\n"
        + "".join(f"sha256_{k} = {v}\n" for k, v in digests.items()))
    echo(f"wrote {len(data)} samples: train {len(train)}, val {len(val)}, "
         f"test {len(test)} -> {out_dir}")
    return digests
