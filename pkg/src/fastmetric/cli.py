"""Command-line interface: individual stages plus the ``pipeline`` and ``compare`` drivers.

Exit codes: 0 success, 1 numeric failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as fmdata
from .embedder import TrainConfig, TrainRun, train_regressor, train_siamese
from .errors import FastMetricError, InvalidInputError, NumericFailureError
from .evaluation import (
    DOT,
    EUCLIDEAN,
    EvalReport,
    auroc,
    emit_convergence_csv,
    knn_accuracy,
    knn_predict_multilabel_batch,
    mean_jaccard,
    pair_scores,
    time_to_reach,
)
from .kernels import BACKEND
from .nn import MLP, load_model, parse_arch, predict, save_model
from .relation import PairArray, generate_pairs
from .targetopt import (
    CONTRASTIVE,
    LossKind,
    PhaseOneConfig,
    TargetTable,
    learn_targets,
    standardize_targets,
)

log = logging.getLogger("fastmetric")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class StageError(Exception):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage}: {cause}")


# ---------------------------------------------------------------- manifests


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Key=value run record: parameters, seeds, file digests and stage timings."""

    def __init__(self, command):
        self.command = command
        self.params = {}
        self.inputs = {}
        self.outputs = {}
        self.timings = {}
        self.extra = {}

    def input(self, name, path):
        self.inputs[name] = (str(path), file_digest(path))

    def output(self, name, path):
        self.outputs[name] = (str(path), file_digest(path))

    def time(self, stage, seconds):
        self.timings[stage] = max(0.0, float(seconds))

    def lines(self):
        out = [f"command={self.command}", f"kernel_backend={BACKEND}"]
        out += [f"param.{k}={v}" for k, v in sorted(self.params.items())]
        for k, (p, d) in sorted(self.inputs.items()):
            out += [f"input.{k}={p}", f"input.{k}.sha256={d}"]
        for k, (p, d) in sorted(self.outputs.items()):
            out += [f"output.{k}={p}", f"output.{k}.sha256={d}"]
        out += [f"timing.{k}={v:.6f}" for k, v in self.timings.items()]
        out += [f"{k}={v}" for k, v in self.extra.items()]
        return out

    def write(self, path):
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


# ---------------------------------------------------------------- configuration

DEFAULTS = {
    "dataset": "blobs",
    "out_dir": "fastmetric-run",
    "seed": "0",
    "threads": "1",
    "mnist_dir": "",
    "train_features": "",
    "train_labels": "",
    "test_features": "",
    "test_labels": "",
    "blobs_classes": "10",
    "blobs_per_class": "100",
    "blobs_dim": "20",
    "blobs_center_scale": "5.0",
    "blobs_noise": "1.0",
    "multilabel_labels": "5",
    "multilabel_n": "2000",
    "multilabel_dim": "32",
    "multilabel_noise": "0.1",
    "test_fraction": "0.2",
    "val_fraction": "0.1",
    "pos": "10",
    "neg": "10",
    "loss": "contrastive",
    "margin": "1.0",
    "phase1_epochs": "30",
    "phase1_batch": "256",
    "phase1_lr": "0.001",
    "init_scale": "0.1",
    "arch": "in-64-64-16",
    "dropout": "0.5",
    "dropout_placement": "inner",
    "epochs": "10",
    "batch_size": "128",
    "lr": "0.001",
    "eval_every": "",
    "metric": "auto",
    "k": "5",
    "multilabel": "auto",
    "siamese_epochs": "2",
    "siamese_eval_every": "",
    "fml_epoch_factor": "2",
    "repeats": "5",
    "auroc_target": "0.98",
}


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"config line {lineno}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path=None, overrides=()) -> dict:
    cfg = dict(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        cfg.update(parse_config_text(p.read_text(encoding="utf-8")))
    for item in overrides:
        if "=" not in item:
            raise InvalidInputError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = v.strip()
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise InvalidInputError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cfg


class Cfg:
    """Typed view over the flat string config."""

    def __init__(self, raw: dict):
        self.raw = raw

    def s(self, k):
        return self.raw[k]

    def i(self, k):
        return int(self.raw[k])

    def f(self, k):
        return float(self.raw[k])

    def opt_i(self, k):
        v = self.raw[k]
        return int(v) if v not in ("", "none") else None


# ---------------------------------------------------------------- datasets


@dataclass
class Splits:
    fit: fmdata.DenseDataset
    val: fmdata.DenseDataset | None
    test: fmdata.DenseDataset
    train_all: fmdata.DenseDataset
    witnesses: list = field(default_factory=list)


def _require(path, what):
    if not path:
        raise InvalidInputError(f"config needs {what}")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input not found: {p}")
    return p


def load_splits(c: Cfg) -> Splits:
    kind = c.s("dataset")
    witnesses = []
    if kind == "mnist":
        d = _require(c.s("mnist_dir"), "mnist_dir")
        for name in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"):
            _require(str(d / name), name)
        train, test = fmdata.load_mnist(d, "train"), fmdata.load_mnist(d, "test")
    elif kind == "files":
        train = fmdata.DenseDataset(
            fmdata.load_matrix(_require(c.s("train_features"), "train_features")),
            fmdata.load_labels(_require(c.s("train_labels"), "train_labels")),
        )
        test = fmdata.DenseDataset(
            fmdata.load_matrix(_require(c.s("test_features"), "test_features")),
            fmdata.load_labels(_require(c.s("test_labels"), "test_labels")),
        )
    elif kind in ("blobs", "multilabel"):
        if kind == "blobs":
            full = fmdata.synth_blobs(
                c.i("blobs_classes"), c.i("blobs_per_class"), c.i("blobs_dim"),
                c.f("blobs_center_scale"), c.f("blobs_noise"), seed=c.i("seed"),
            )
        else:
            full = fmdata.synth_multilabel(
                c.i("multilabel_labels"), c.i("multilabel_n"), c.i("multilabel_dim"),
                seed=c.i("seed"), noise_std=c.f("multilabel_noise"),
            )
            # label-set triples (a ~ b, b ~ c, a !~ c) planted by the generator
            witnesses = [tuple(full.label_sets[k] for k in w) for w in full.witnesses]
        perm = np.random.default_rng([c.i("seed"), 7]).permutation(len(full))
        n_test = int(round(c.f("test_fraction") * len(full)))
        train, test = full.subset(np.sort(perm[n_test:])), full.subset(np.sort(perm[:n_test]))
    else:
        raise InvalidInputError(f"unknown dataset {kind!r}")
    train.features = np.asarray(train.features, dtype=np.float32)
    test.features = np.asarray(test.features, dtype=np.float32)

    n_val = int(round(c.f("val_fraction") * len(train)))
    if n_val >= 2:
        perm = np.random.default_rng([c.i("seed"), 11]).permutation(len(train))
        fit, val = train.subset(np.sort(perm[n_val:])), train.subset(np.sort(perm[:n_val]))
    else:
        fit, val = train, None
    return Splits(fit, val, test, train, witnesses)


def resolve_arch(arch: str, n_features: int) -> list:
    parts = arch.split("-")
    if parts[0] == "in":
        parts[0] = str(n_features)
    widths = parse_arch("-".join(parts))
    if widths[0] != n_features:
        raise InvalidInputError(f"architecture input width {widths[0]} != feature count {n_features}")
    return widths


def is_multilabel(c: Cfg, sets) -> bool:
    flag = c.s("multilabel")
    if flag == "auto":
        return any(len(s) != 1 for s in sets)
    return flag.lower() in ("1", "true", "yes")


def default_metric(c: Cfg, loss_tag: str) -> str:
    m = c.s("metric")
    if m == "auto":
        return EUCLIDEAN if loss_tag == CONTRASTIVE else DOT
    if m not in (EUCLIDEAN, DOT):
        raise InvalidInputError(f"unknown metric {m!r}")
    return m


# ---------------------------------------------------------------- in-process drivers


def _stage(name, manifest, fn, *args, **kwargs):
    t0 = time.perf_counter()
    try:
        result = fn(*args, **kwargs)
    except (FastMetricError, OSError, ValueError) as e:
        raise StageError(name, e) from e
    manifest.time(name, time.perf_counter() - t0)
    return result


def extrinsic(c: Cfg, train_emb, train_sets, test_emb, test_sets) -> dict:
    k = c.i("k")
    if is_multilabel(c, list(train_sets) + list(test_sets)):
        preds = knn_predict_multilabel_batch(train_emb, list(train_sets), test_emb, k)
        return {"jaccard": mean_jaccard(preds, list(test_sets))}
    ytr = np.array([next(iter(s)) for s in train_sets])
    yte = np.array([next(iter(s)) for s in test_sets])
    return {"knn_accuracy": knn_accuracy(train_emb, ytr, test_emb, yte, k)}


def _auroc_fn(features, pairs, metric):
    def fn(model):
        return auroc(pair_scores(predict(model, features), pairs, metric))

    return fn


@dataclass
class PipelineResult:
    report: EvalReport
    manifest: Manifest
    out_dir: Path
    phase1_objectives: list
    train_run: TrainRun
    witnesses: list


def run_pipeline(raw_cfg: dict) -> PipelineResult:
    """pairs -> targets -> standardize -> regressor -> AUROC + k-NN, all artifacts on disk."""
    c = Cfg(raw_cfg)
    out = Path(c.s("out_dir"))
    manifest = Manifest("pipeline")
    manifest.params.update(raw_cfg)
    splits = _stage("load-data", Manifest("scratch"), load_splits, c)
    out.mkdir(parents=True, exist_ok=True)
    seed = c.i("seed")
    loss = LossKind.contrastive(c.f("margin")) if c.s("loss") == CONTRASTIVE else LossKind.dot()
    metric = default_metric(c, loss.tag)
    widths = resolve_arch(c.s("arch"), splits.fit.n_features)

    def gen():
        fit_p = generate_pairs(splits.fit.label_sets, c.i("pos"), c.i("neg"), seed)
        val_p = generate_pairs(splits.val.label_sets, c.i("pos"), c.i("neg"), seed + 1) if splits.val else None
        test_p = generate_pairs(splits.test.label_sets, c.i("pos"), c.i("neg"), seed + 2)
        return fit_p, val_p, test_p

    fit_pairs, val_pairs, test_pairs = _stage("gen-pairs", manifest, gen)
    fmdata.save_pairs(out / "train_pairs.csv", fit_pairs)
    fmdata.save_pairs(out / "test_pairs.csv", test_pairs)
    manifest.output("train_pairs", out / "train_pairs.csv")
    manifest.output("test_pairs", out / "test_pairs.csv")
    if val_pairs is not None:
        fmdata.save_pairs(out / "val_pairs.csv", val_pairs)
        manifest.output("val_pairs", out / "val_pairs.csv")

    p1cfg = PhaseOneConfig(
        dim=widths[-1], epochs=c.i("phase1_epochs"), batch_size=c.i("phase1_batch"), seed=seed,
        init_scale=c.f("init_scale"), lr=c.f("phase1_lr"), threads=c.i("threads"),
    )
    p1 = _stage("learn-targets", manifest, learn_targets, fit_pairs, len(splits.fit), loss, p1cfg)
    fmdata.save_matrix(out / "targets.fmlt", p1.table.vectors)
    manifest.output("targets", out / "targets.fmlt")

    std = _stage("standardize", manifest, standardize_targets, p1.table)
    fmdata.save_matrix(out / "targets_std.fmlt", std.vectors)
    manifest.output("targets_std", out / "targets_std.fmlt")

    model = MLP.from_arch(widths, c.f("dropout"), c.s("dropout_placement"), seed=seed)
    tcfg = TrainConfig(
        epochs=c.i("epochs"), batch_size=c.i("batch_size"), seed=seed, lr=c.f("lr"),
        eval_every=c.opt_i("eval_every"),
        evaluator=_auroc_fn(splits.test.features, test_pairs, metric),
        validator=_auroc_fn(splits.val.features, val_pairs, metric) if val_pairs is not None else None,
    )
    run = _stage("train-embedder", manifest, train_regressor, splits.fit.features, std, model, tcfg)
    save_model(model, out / "model.fmlm")
    manifest.output("model", out / "model.fmlm")
    _write_train_log(run, out / "train_log.csv")

    def eval_auroc():
        test_emb = predict(model, splits.test.features)
        return test_emb, auroc(pair_scores(test_emb, test_pairs, metric))

    test_emb, test_auroc = _stage("eval-auroc", manifest, eval_auroc)
    train_emb = predict(model, splits.train_all.features)
    fmdata.save_matrix(out / "train_emb.fmlt", train_emb)
    fmdata.save_matrix(out / "test_emb.fmlt", test_emb)
    manifest.output("train_emb", out / "train_emb.fmlt")
    manifest.output("test_emb", out / "test_emb.fmlt")

    ext = _stage("eval-knn", manifest, extrinsic, c, train_emb, splits.train_all.label_sets,
                 test_emb, splits.test.label_sets)
    report = EvalReport(auroc=test_auroc, k=c.i("k"), metric=metric, **ext)
    _write_report(report, out / "report.txt")
    manifest.output("report", out / "report.txt")
    manifest.extra["phase1.optimizer_seconds"] = f"{p1.seconds:.6f}"
    if run.best_epoch is not None:
        manifest.extra["selected_epoch"] = f"{run.best_epoch:g}"
    manifest.write(out / "manifest.txt")
    return PipelineResult(report, manifest, out, p1.objectives, run, splits.witnesses)


def _write_report(report: EvalReport, path):
    lines = []
    for k in ("auroc", "knn_accuracy", "jaccard"):
        v = getattr(report, k)
        if v is not None:
            lines.append(f"{k}={v:.6f}")
    lines += [f"k={report.k}", f"metric={report.metric}"]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_train_log(run: TrainRun, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("seconds,epoch,objective,test_auroc\n")
        for e in run.log:
            auc = "" if e.test_auroc is None else f"{e.test_auroc:.6g}"
            f.write(f"{e.seconds:.6g},{e.epoch:.6g},{e.objective:.6g},{auc}\n")


def t_interval(samples, confidence=0.95):
    """Mean and half-width of a t-based confidence interval (None when n < 2)."""
    from scipy import stats

    x = np.asarray(samples, dtype=np.float64)
    mean = float(x.mean())
    if len(x) < 2:
        return mean, None
    half = stats.t.ppf(0.5 + confidence / 2, len(x) - 1) * x.std(ddof=1) / np.sqrt(len(x))
    return mean, float(half)


@dataclass
class MethodResult:
    name: str
    run: TrainRun
    test_auroc: float
    extrinsic: dict
    phase1_seconds: float = 0.0
    curve_path: Path | None = None
    # items visited per epoch: instances for a regressor, pairs for the Siamese net
    n_items: int = 0

    @property
    def curve(self):
        return [(e.seconds, e.test_auroc) for e in self.run.log if e.test_auroc is not None]

    def time_to(self, threshold):
        return time_to_reach(self.curve, threshold)

    @property
    def seconds_per_epoch(self):
        return float(np.median(self.run.epoch_seconds))


@dataclass
class CompareResult:
    methods: dict
    phase1_times: dict
    summary_path: Path
    manifest: Manifest


def run_compare(raw_cfg: dict, methods=("FML-C", "FML-DP", "Siamese")) -> CompareResult:
    """Train both FML variants and the Siamese baseline on one dataset and compare."""
    c = Cfg(raw_cfg)
    out = Path(c.s("out_dir"))
    manifest = Manifest("compare")
    manifest.params.update(raw_cfg)
    splits = _stage("load-data", manifest, load_splits, c)
    out.mkdir(parents=True, exist_ok=True)
    seed = c.i("seed")
    widths = resolve_arch(c.s("arch"), splits.fit.n_features)
    pos, neg = c.i("pos"), c.i("neg")
    fit_pairs = generate_pairs(splits.fit.label_sets, pos, neg, seed)
    val_pairs = generate_pairs(splits.val.label_sets, pos, neg, seed + 1) if splits.val else None
    test_pairs = generate_pairs(splits.test.label_sets, pos, neg, seed + 2)
    sia_epochs = c.i("siamese_epochs")
    fml_epochs = c.i("fml_epoch_factor") * sia_epochs
    results = {}
    phase1_times = {}

    def train_cfg(epochs, metric, offset=0.0, eval_every=None):
        return TrainConfig(
            epochs=epochs, batch_size=c.i("batch_size"), seed=seed, lr=c.f("lr"), eval_every=eval_every,
            evaluator=_auroc_fn(splits.test.features, test_pairs, metric),
            validator=_auroc_fn(splits.val.features, val_pairs, metric) if val_pairs is not None else None,
            time_offset=offset,
        )

    def finish(name, model, run, metric, n_items, p1_seconds=0.0):
        test_emb = predict(model, splits.test.features)
        train_emb = predict(model, splits.train_all.features)
        res = MethodResult(
            name, run, auroc(pair_scores(test_emb, test_pairs, metric)),
            extrinsic(c, train_emb, splits.train_all.label_sets, test_emb, splits.test.label_sets),
            p1_seconds, n_items=n_items,
        )
        res.curve_path = out / f"{name.lower()}.csv"
        emit_convergence_csv(run, res.curve_path)
        save_model(model, out / f"{name.lower()}.fmlm")
        return res

    for name in methods:
        if name == "Siamese":
            continue
        loss = LossKind.contrastive(c.f("margin")) if name == "FML-C" else LossKind.dot()
        metric = default_metric(c, loss.tag)
        times = []
        table = None
        # the curve offset counts optimiser time only; per-epoch objective passes are
        # monitoring, paused like evaluation in phase 2. The runtime table uses full wall time.
        offset = 0.0
        for r in range(max(1, c.i("repeats"))):
            p1cfg = PhaseOneConfig(
                dim=widths[-1], epochs=c.i("phase1_epochs"), batch_size=c.i("phase1_batch"),
                seed=seed + r, init_scale=c.f("init_scale"), lr=c.f("phase1_lr"), threads=c.i("threads"),
            )
            t0 = time.perf_counter()
            p1 = learn_targets(fit_pairs, len(splits.fit), loss, p1cfg)
            times.append(time.perf_counter() - t0)
            if table is None:
                table, offset = p1.table, p1.seconds
        phase1_times[name] = times
        manifest.time(f"learn-targets.{name}", times[0])
        std = standardize_targets(table)
        model = MLP.from_arch(widths, c.f("dropout"), c.s("dropout_placement"), seed=seed)
        run = train_regressor(splits.fit.features, std, model,
                              train_cfg(fml_epochs, metric, offset, c.opt_i("eval_every")))
        manifest.time(f"train-embedder.{name}", run.train_seconds)
        results[name] = finish(name, model, run, metric, len(splits.fit), offset)
        log.info("%s done: test AUROC %.4f %s", name, results[name].test_auroc, results[name].extrinsic)

    if "Siamese" in methods:
        model = MLP.from_arch(widths, c.f("dropout"), c.s("dropout_placement"), seed=seed)
        run = train_siamese(splits.fit.features, fit_pairs, model, c.f("margin"),
                            train_cfg(sia_epochs, EUCLIDEAN, 0.0, c.opt_i("siamese_eval_every")))
        manifest.time("train-siamese", run.train_seconds)
        results["Siamese"] = finish("Siamese", model, run, EUCLIDEAN, len(fit_pairs))
        log.info("Siamese done: test AUROC %.4f %s", results["Siamese"].test_auroc, results["Siamese"].extrinsic)

    summary = out / "summary.txt"
    summary.write_text(format_summary(results, phase1_times, c.f("auroc_target")), encoding="utf-8")
    for name, res in results.items():
        manifest.output(f"curve.{name}", res.curve_path)
    manifest.write(out / "manifest.txt")
    return CompareResult(results, phase1_times, summary, manifest)


def format_summary(results: dict, phase1_times: dict, target: float) -> str:
    ext_key = "jaccard" if any("jaccard" in r.extrinsic for r in results.values()) else "knn_accuracy"
    head = f"{'model':<8} {'test_auroc':>10} {ext_key:>12} {'t_to_' + format(target, 'g'):>10} {'s/epoch':>9} {'best_epoch':>10}"
    rows = [head]
    for name, r in results.items():
        t = r.time_to(target)
        rows.append(
            f"{name:<8} {r.test_auroc:>10.4f} {r.extrinsic[ext_key]:>12.4f} "
            f"{(f'{t:.1f}' if np.isfinite(t) else 'never'):>10} {r.seconds_per_epoch:>9.2f} "
            f"{(f'{r.run.best_epoch:g}' if r.run.best_epoch is not None else '-'):>10}"
        )
    rows.append("")
    rows.append("phase-1 runtime (s), mean +/- 95% CI half-width")
    for name, times in phase1_times.items():
        mean, half = t_interval(times)
        rows.append(f"{name:<8} {mean:.2f} (+/-{half:.2f})" if half is not None else f"{name:<8} {mean:.2f} (+/- n/a)")
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------- argparse commands


def _manifest_path(args, default_from):
    if getattr(args, "manifest", None):
        return Path(args.manifest)
    return Path(str(default_from) + f".{args.command}.manifest")


def cmd_gen_pairs(args):
    m = Manifest("gen-pairs")
    m.params.update(pos=args.pos, neg=args.neg, seed=args.seed)
    m.input("labels", args.labels)
    sets = fmdata.load_labels(args.labels)
    t0 = time.perf_counter()
    pairs = generate_pairs(sets, args.pos, args.neg, args.seed)
    m.time("gen-pairs", time.perf_counter() - t0)
    fmdata.save_pairs(args.out, pairs)
    m.output("pairs", args.out)
    m.write(_manifest_path(args, args.out))
    print(f"{len(pairs)} pairs ({int(pairs.y.sum())} similar) -> {args.out}")


def cmd_learn_targets(args):
    m = Manifest("learn-targets")
    loss = LossKind.contrastive(args.margin) if args.loss == CONTRASTIVE else LossKind.dot()
    threads = 1 if args.deterministic else args.threads
    cfg = PhaseOneConfig(dim=args.dim, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
                         init_scale=args.init_scale, lr=args.lr, threads=threads)
    m.params.update(vars(cfg))
    m.params["loss"] = loss.tag
    m.params["margin"] = loss.margin
    m.input("pairs", args.pairs)
    pairs = fmdata.load_pairs(args.pairs)

    def show(epoch, obj, elapsed):
        print(f"epoch {epoch:4d}  objective {obj:.6g}  elapsed {elapsed:.3f}s")

    t0 = time.perf_counter()
    res = learn_targets(pairs, args.n, loss, cfg, on_epoch=show)
    m.time("learn-targets", time.perf_counter() - t0)
    print(f"total wall time {res.seconds:.3f}s ({res.backend} kernels)")
    fmdata.save_matrix(args.out, res.table.vectors)
    m.output("targets", args.out)
    m.write(_manifest_path(args, args.out))


def cmd_standardize(args):
    m = Manifest("standardize")
    m.input("targets", args.targets)
    t0 = time.perf_counter()
    std = standardize_targets(TargetTable(fmdata.load_matrix(args.targets)))
    m.time("standardize", time.perf_counter() - t0)
    fmdata.save_matrix(args.out, std.vectors)
    m.output("targets", args.out)
    m.write(_manifest_path(args, args.out))


def _model_for(args, n_features):
    widths = resolve_arch(args.arch, n_features)
    return MLP.from_arch(widths, args.dropout, args.dropout_placement, seed=args.seed)


def _write_log_if(args, run):
    if args.log:
        _write_train_log(run, args.log)


def cmd_train_embedder(args):
    m = Manifest("train-embedder")
    m.input("features", args.features)
    m.input("targets", args.targets)
    X = fmdata.load_matrix(args.features)
    T = fmdata.load_matrix(args.targets).astype(np.float64)
    model = _model_for(args, X.shape[1])
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, lr=args.lr)
    m.params.update(arch=model.arch, dropout=args.dropout, epochs=args.epochs, seed=args.seed,
                    batch_size=args.batch_size, lr=args.lr)
    t0 = time.perf_counter()
    run = train_regressor(X, T, model, cfg)
    m.time("train-embedder", time.perf_counter() - t0)
    save_model(model, args.out)
    _write_log_if(args, run)
    m.output("model", args.out)
    m.write(_manifest_path(args, args.out))
    print(f"final objective {run.final_objective:.6g} after {args.epochs} epochs ({run.train_seconds:.2f}s)")


def cmd_train_siamese(args):
    m = Manifest("train-siamese")
    m.input("features", args.features)
    m.input("pairs", args.pairs)
    X = fmdata.load_matrix(args.features)
    pairs = fmdata.load_pairs(args.pairs)
    model = _model_for(args, X.shape[1])
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, lr=args.lr)
    m.params.update(arch=model.arch, dropout=args.dropout, epochs=args.epochs, seed=args.seed,
                    margin=args.margin, batch_size=args.batch_size, lr=args.lr)
    t0 = time.perf_counter()
    run = train_siamese(X, pairs, model, args.margin, cfg)
    m.time("train-siamese", time.perf_counter() - t0)
    save_model(model, args.out)
    _write_log_if(args, run)
    m.output("model", args.out)
    m.write(_manifest_path(args, args.out))
    print(f"final objective {run.final_objective:.6g} after {args.epochs} epochs ({run.train_seconds:.2f}s)")


def cmd_embed(args):
    m = Manifest("embed")
    m.input("model", args.model)
    m.input("features", args.features)
    model = load_model(args.model)
    t0 = time.perf_counter()
    emb = predict(model, fmdata.load_matrix(args.features))
    m.time("embed", time.perf_counter() - t0)
    fmdata.save_matrix(args.out, emb)
    m.output("embeddings", args.out)
    m.write(_manifest_path(args, args.out))


def cmd_eval_auroc(args):
    m = Manifest("eval-auroc")
    m.input("embeddings", args.embeddings)
    m.input("pairs", args.pairs)
    t0 = time.perf_counter()
    value = auroc(pair_scores(fmdata.load_matrix(args.embeddings), fmdata.load_pairs(args.pairs), args.metric))
    m.time("eval-auroc", time.perf_counter() - t0)
    m.extra["auroc"] = f"{value:.6f}"
    m.params["metric"] = args.metric
    m.write(_manifest_path(args, args.embeddings))
    print(f"auroc={value:.6f}")


def cmd_eval_knn(args):
    m = Manifest("eval-knn")
    for name in ("train_emb", "train_labels", "test_emb", "test_labels"):
        m.input(name, getattr(args, name))
    tr, te = fmdata.load_matrix(args.train_emb), fmdata.load_matrix(args.test_emb)
    trl, tel = fmdata.load_labels(args.train_labels), fmdata.load_labels(args.test_labels)
    t0 = time.perf_counter()
    if args.multilabel:
        preds = knn_predict_multilabel_batch(tr, trl, te, args.k)
        key, value = "jaccard", mean_jaccard(preds, tel)
    else:
        ytr = [next(iter(s)) for s in trl]
        yte = [next(iter(s)) for s in tel]
        key, value = "knn_accuracy", knn_accuracy(tr, ytr, te, yte, args.k)
    m.time("eval-knn", time.perf_counter() - t0)
    m.extra[key] = f"{value:.6f}"
    m.params["k"] = args.k
    m.write(_manifest_path(args, args.test_emb))
    print(f"{key}={value:.6f}")


def cmd_pipeline(args):
    raw = load_config(args.config, args.set)
    raw["seed"] = str(args.seed) if args.seed_given else raw["seed"]
    raw["threads"] = "1" if args.deterministic else (str(args.threads) if args.threads_given else raw["threads"])
    res = run_pipeline(raw)
    r = res.report
    print(f"auroc={r.auroc:.6f}")
    if r.knn_accuracy is not None:
        print(f"knn_accuracy={r.knn_accuracy:.6f}")
    if r.jaccard is not None:
        print(f"jaccard={r.jaccard:.6f}")
    print(f"artifacts in {res.out_dir}")


def cmd_compare(args):
    raw = load_config(args.config, args.set)
    raw["seed"] = str(args.seed) if args.seed_given else raw["seed"]
    raw["threads"] = "1" if args.deterministic else (str(args.threads) if args.threads_given else raw["threads"])
    res = run_compare(raw)
    print(res.summary_path.read_text(encoding="utf-8"), end="")


def _add_net_args(p):
    p.add_argument("--arch", required=True, help='e.g. "784-500-500-16" ("in" = feature count)')
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--dropout-placement", choices=("inner", "all"), default="inner")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--log", help="CSV log: seconds,epoch,objective,test_auroc")
    p.add_argument("--out", required=True)


def build_parser():
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible")
    common.add_argument("--manifest", help="where to write the run manifest")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="fastmetric", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("gen-pairs", help="sample pair constraints from a labels file")
    p.add_argument("--labels", required=True)
    p.add_argument("--pos", type=int, default=10)
    p.add_argument("--neg", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_pairs)

    p = sub.add_parser("learn-targets", help="phase 1: optimise one target vector per instance")
    p.add_argument("--pairs", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--loss", choices=("contrastive", "dot"), default="contrastive")
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--init-scale", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn_targets)

    p = sub.add_parser("standardize", help="centre targets and rescale to mean component std 1")
    p.add_argument("--targets", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_standardize)

    p = sub.add_parser("train-embedder", help="phase 2: regress features onto targets")
    p.add_argument("--features", required=True)
    p.add_argument("--targets", required=True)
    _add_net_args(p)
    p.set_defaults(func=cmd_train_embedder)

    p = sub.add_parser("train-siamese", help="baseline: Siamese network with contrastive loss")
    p.add_argument("--features", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--margin", type=float, default=1.0)
    _add_net_args(p)
    p.set_defaults(func=cmd_train_siamese)

    p = sub.add_parser("embed", help="apply a trained model to a feature matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval-auroc", help="pair-similarity AUROC of embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--metric", choices=(EUCLIDEAN, DOT), default=EUCLIDEAN)
    p.set_defaults(func=cmd_eval_auroc)

    p = sub.add_parser("eval-knn", help="k-NN accuracy (or Jaccard with --multilabel)")
    p.add_argument("--train-emb", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--test-emb", required=True)
    p.add_argument("--test-labels", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--multilabel", action="store_true")
    p.set_defaults(func=cmd_eval_knn)

    for name, func, text in (
        ("pipeline", cmd_pipeline, "run every stage from a key=value config"),
        ("compare", cmd_compare, "FML-C vs FML-DP vs Siamese on one dataset"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = hasattr(args, "seed")
    args.threads_given = hasattr(args, "threads")
    for name, default in (("seed", 0), ("threads", 1), ("deterministic", False), ("manifest", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(e.cause, NumericFailureError) else EXIT_USAGE
    except NumericFailureError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FastMetricError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
