"""Pipeline orchestration CLI.

Subcommands: synth, ingest, features, select, train, eval, fuse,
baseline-humans, report. Configuration is an INI file whose defaults match
the reference training recipe; flags override config values. Exit codes:
0 ok, 2 usage, 3 data error, 4 numeric failure.

Corpus directory layout:

    <corpus>/frames/<subject>.csv
    <corpus>/annotations/<dimension>/<subject>.csv
    <corpus>/partition.ini
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, corpus, features as feats, lld, metrics, model as mdl, selection
from .errors import DataError, NumericError, PipelineError
from .manifest import RunManifest, file_digest

log = logging.getLogger("eyeaffect")

CACHE_ENV = "EYEAFFECT_CACHE"

DEFAULT_CONFIG = {
    "corpus": {
        "annotator": "mean",
    },
    "lld": {
        "closure_threshold": "1.0",
        "fixation_threshold": "0.005",
        "approach_epsilon": "0.0",
        "pupil_delta": "0.01",
        "direct_gaze_angle": "0.087",
    },
    "selection": {
        "thresholds": "0.1,0.15,0.2",
        "shifts": "0.0:4.4:0.2",
        "bins": "32",
    },
    "model": {
        "hidden_sizes": "40,30",
        "learning_rate": "1e-05",
        "input_noise_sd": "0.1",
        "max_epochs": "100",
        "patience_epochs": "10",
        "seed": "1787452436",
        "momentum": "0.0",
    },
    "run": {
        "jobs": "1",
    },
}


class Config:
    def __init__(self, path=None, overrides=()):
        self.values = {s: dict(kv) for s, kv in DEFAULT_CONFIG.items()}
        if path:
            parser = configparser.ConfigParser()
            parser.optionxform = str
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
            for section in parser.sections():
                if section not in self.values:
                    raise DataError(f"unknown config section [{section}]")
                for key, value in parser.items(section):
                    if key not in self.values[section]:
                        raise DataError(f"unknown config key {section}.{key}")
                    self.values[section][key] = value
        for item in overrides:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise DataError(f"--set expects section.key=value, got {item!r}")
            dotted, value = item.split("=", 1)
            section, key = dotted.split(".", 1)
            if section not in self.values or key not in self.values[section]:
                raise DataError(f"unknown config key {section}.{key}")
            self.values[section][key] = value

    def get(self, section, key):
        return self.values[section][key]

    def set(self, section, key, value):
        self.values[section][key] = str(value)

    def floats(self, section, key):
        return tuple(float(v) for v in self.get(section, key).split(","))

    def snapshot(self) -> dict:
        return {s: dict(kv) for s, kv in self.values.items()}

    def dump(self) -> str:
        out = io.StringIO()
        for section, kv in self.values.items():
            out.write(f"[{section}]\n")
            for key, value in kv.items():
                out.write(f"{key} = {value}\n")
            out.write("\n")
        return out.getvalue()

    def threshold_config(self) -> lld.ThresholdConfig:
        return lld.ThresholdConfig(
            closure_threshold=float(self.get("lld", "closure_threshold")),
            fixation_threshold=float(self.get("lld", "fixation_threshold")),
            approach_epsilon=float(self.get("lld", "approach_epsilon")),
            pupil_delta=float(self.get("lld", "pupil_delta")),
            direct_gaze_angle=float(self.get("lld", "direct_gaze_angle")),
        )

    def model_config(self) -> mdl.ModelConfig:
        return mdl.ModelConfig(
            hidden_sizes=tuple(int(v) for v in self.get("model", "hidden_sizes").split(",")),
            learning_rate=float(self.get("model", "learning_rate")),
            input_noise_sd=float(self.get("model", "input_noise_sd")),
            max_epochs=int(self.get("model", "max_epochs")),
            patience_epochs=int(self.get("model", "patience_epochs")),
            seed=int(self.get("model", "seed")),
            momentum=float(self.get("model", "momentum")),
        )

    def shift_config(self) -> selection.ShiftConfig:
        spec = self.get("selection", "shifts")
        if ":" in spec:
            start, stop, step = (float(v) for v in spec.split(":"))
            n = int(round((stop - start) / step)) + 1
            shifts = tuple(round(start + i * step, 10) for i in range(n))
        else:
            shifts = tuple(float(v) for v in spec.split(","))
        return selection.ShiftConfig(shifts=shifts)


def _cache_dir(out_dir: Path) -> Path:
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else out_dir / "cache"


def _load_frames_file(path: Path, cache_dir: Path | None):
    """Parse one frames CSV, via the column cache when possible."""
    if cache_dir is not None:
        key = file_digest(path)
        cached = cache_dir / f"frames-{key}.npz"
        if cached.exists():
            with np.load(cached, allow_pickle=False) as data:
                n = data["frame_index"].size
                has_pupil = "pupil_diameter" in data
                has_direct = "direct_gaze" in data
                return [
                    corpus.FrameRecord(
                        frame_index=int(data["frame_index"][i]),
                        timestamp=float(data["timestamp"][i]),
                        confidence=float(data["confidence"][i]),
                        gaze_x=float(data["gaze_x"][i]),
                        gaze_y=float(data["gaze_y"][i]),
                        blink_intensity=float(data["blink_intensity"][i]),
                        pupil_diameter=float(data["pupil_diameter"][i]) if has_pupil else None,
                        direct_gaze=bool(data["direct_gaze"][i]) if has_direct else None,
                    )
                    for i in range(n)
                ]
    with open(path, "rb") as fh:
        records = corpus.parse_frames(fh)
    if cache_dir is not None and records and not any(r.eye_landmarks for r in records):
        cache_dir.mkdir(parents=True, exist_ok=True)
        arrays = {
            "frame_index": np.array([r.frame_index for r in records]),
            "timestamp": np.array([r.timestamp for r in records]),
            "confidence": np.array([r.confidence for r in records]),
            "gaze_x": np.array([r.gaze_x for r in records]),
            "gaze_y": np.array([r.gaze_y for r in records]),
            "blink_intensity": np.array([r.blink_intensity for r in records]),
        }
        if all(r.pupil_diameter is not None for r in records):
            arrays["pupil_diameter"] = np.array([r.pupil_diameter for r in records])
        if all(r.direct_gaze is not None for r in records):
            arrays["direct_gaze"] = np.array([r.direct_gaze for r in records])
        np.savez(cache_dir / f"frames-{file_digest(path)}.npz", **arrays)
    return records


def _corpus_paths(corpus_dir: Path):
    frames_dir = corpus_dir / "frames"
    if not frames_dir.is_dir():
        raise DataError(f"no frames/ directory under {corpus_dir}")
    frame_files = sorted(frames_dir.glob("*.csv"))
    if not frame_files:
        raise DataError(f"no frame CSVs in {frames_dir}")
    return frame_files


def _load_partition(corpus_dir: Path) -> corpus.Partition:
    path = corpus_dir / "partition.ini"
    if not path.exists():
        raise DataError(f"missing partition file {path}")
    with open(path, encoding="utf-8") as fh:
        return corpus.read_partition(fh)


def _load_traces(corpus_dir: Path, dimension: str, subject: str):
    path = corpus_dir / "annotations" / dimension / f"{subject}.csv"
    if not path.exists():
        raise DataError(f"missing annotation file {path}")
    with open(path, "rb") as fh:
        return corpus.parse_annotations(fh, dimension)


def _target_values(traces, policy: str) -> np.ndarray:
    if policy == "mean":
        return np.mean([t.values for t in traces], axis=0)
    for t in traces:
        if t.annotator_id == policy:
            return t.values
    raise DataError(f"annotator {policy!r} not present (have {[t.annotator_id for t in traces]})")


def _load_feature_matrix(features_dir: Path, subject: str, catalog) -> feats.FeatureMatrix:
    path = features_dir / f"{subject}.csv"
    if not path.exists():
        raise DataError(f"missing feature file {path}")
    with open(path, encoding="utf-8") as fh:
        return feats.read_feature_csv(fh, catalog)


def _build_split_sequences(corpus_dir, features_dir, subjects, dimension, policy, catalog):
    sequences = []
    inputs = []
    for sid in sorted(subjects):
        matrix = _load_feature_matrix(features_dir, sid, catalog)
        traces = _load_traces(corpus_dir, dimension, sid)
        target = _target_values(traces, policy)
        sequences.append(selection.aligned_sequence(sid, matrix, target))
        inputs.append(features_dir / f"{sid}.csv")
        inputs.append(corpus_dir / "annotations" / dimension / f"{sid}.csv")
    return sequences, inputs


def _write_manifest(out_dir: Path, stage: str, manifest: RunManifest):
    manifest.write(out_dir / "manifests" / f"{stage}.json")


# ---------------------------------------------------------------- synth


def cmd_synth(args, cfg: Config):
    corpus_dir = Path(args.corpus)
    seed = args.seed if args.seed is not None else int(cfg.get("model", "seed"))
    duration = args.minutes * 60.0
    frames_by, traces_by = corpus.synth_corpus(seed, args.subjects, duration, args.lag)
    (corpus_dir / "frames").mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command="synth", config=cfg.snapshot(), seed=seed)
    for sid, records in frames_by.items():
        path = corpus_dir / "frames" / f"{sid}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            corpus.serialize_frames(records, fh)
        manifest.add_output(path)
    for dimension in corpus.DIMENSIONS:
        dim_dir = corpus_dir / "annotations" / dimension
        dim_dir.mkdir(parents=True, exist_ok=True)
        for sid, traces in traces_by.items():
            dim_traces = [t for t in traces if t.dimension == dimension]
            path = dim_dir / f"{sid}.csv"
            with open(path, "w", encoding="utf-8", newline="") as fh:
                corpus.write_annotations(dim_traces, fh)
            manifest.add_output(path)
    partition = corpus.synth_partition(frames_by.keys(), args.train, args.val)
    with open(corpus_dir / "partition.ini", "w", encoding="utf-8") as fh:
        corpus.write_partition(partition, fh)
    manifest.add_output(corpus_dir / "partition.ini")
    _write_manifest(corpus_dir, "synth", manifest)
    print(f"synth: wrote {len(frames_by)} subjects to {corpus_dir}")
    return 0


# ---------------------------------------------------------------- ingest


def cmd_ingest(args, cfg: Config):
    corpus_dir = Path(args.corpus)
    cache_dir = _cache_dir(corpus_dir)
    frame_files = _corpus_paths(corpus_dir)
    partition = _load_partition(corpus_dir)
    manifest = RunManifest(command="ingest", config=cfg.snapshot())
    total_frames = 0
    subjects = []
    for path in frame_files:
        sid = path.stem
        records = _load_frames_file(path, cache_dir)
        total_frames += len(records)
        subjects.append(sid)
        manifest.add_input(path)
        for dimension in corpus.DIMENSIONS:
            ann = corpus_dir / "annotations" / dimension / f"{sid}.csv"
            if ann.exists():
                traces = _load_traces(corpus_dir, dimension, sid)
                if abs(len(traces[0]) - len(records)) > 0:
                    log.warning(
                        "%s/%s: %d annotation values vs %d frames (will truncate)",
                        sid, dimension, len(traces[0]), len(records),
                    )
                manifest.add_input(ann)
    partition.check_covers(subjects)
    _write_manifest(corpus_dir, "ingest", manifest)
    print(
        f"ingest: {len(subjects)} subjects, {total_frames} frames, partition "
        f"{len(partition.train)}/{len(partition.validation)}/{len(partition.test)}"
    )
    return 0


# ---------------------------------------------------------------- features


def cmd_features(args, cfg: Config):
    corpus_dir = Path(args.corpus)
    out_dir = Path(args.out)
    features_dir = out_dir / "features"
    features_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = _cache_dir(out_dir)
    thresholds = cfg.threshold_config()
    manifest = RunManifest(command="features", config=cfg.snapshot())
    n_subjects = 0
    for path in _corpus_paths(corpus_dir):
        sid = path.stem
        records = _load_frames_file(path, cache_dir)
        series = lld.derive_llds(records, thresholds)
        matrix = feats.extract_features(series)
        out_path = features_dir / f"{sid}.csv"
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            feats.write_feature_csv(matrix, fh)
        manifest.add_input(path)
        manifest.add_output(out_path)
        n_subjects += 1
        if args.dump_wavelet is not None:
            frame = args.dump_wavelet
            window = feats.WINDOW
            if not window - 1 <= frame < len(series):
                raise DataError(
                    f"--dump-wavelet frame {frame} outside [{window - 1}, {len(series) - 1}]"
                )
            from . import wavelet as wv

            decomp = wv.dwt_db10(series.window(frame - window + 1, frame).pupil_diam)
            dump_path = features_dir / f"wavelet_{sid}_{frame}.csv"
            with open(dump_path, "w", encoding="utf-8", newline="") as fh:
                wv.write_coefficient_csv(decomp, fh)
            manifest.add_output(dump_path)
        log.info("%s: %d feature rows", sid, len(matrix))
    _write_manifest(out_dir, "features", manifest)
    print(f"features: wrote {n_subjects} matrices to {features_dir}")
    return 0


# ---------------------------------------------------------------- select


def _svg_line_plot(series, title, xlabel, ylabel, width=640, height=400) -> str:
    """Minimal dependency-free SVG line chart; series: {label: (xs, ys)}."""
    margin = 60
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys if np.isfinite(y)]
    if not xs_all or not ys_all:
        raise ValueError("nothing to plot")
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    plot_w, plot_h = width - 2 * margin, height - 2 * margin

    def px(x):
        return margin + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return height - margin - (y - y_lo) / (y_hi - y_lo) * plot_h

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">{xlabel}</text>',
        f'<text x="16" y="{height / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {height / 2:.1f})">{ylabel}</text>',
    ]
    for i in range(5):
        xv = x_lo + i * (x_hi - x_lo) / 4
        yv = y_lo + i * (y_hi - y_lo) / 4
        parts.append(
            f'<text x="{px(xv):.1f}" y="{height - margin + 16}" text-anchor="middle" '
            f'font-size="10">{xv:.2g}</text>'
        )
        parts.append(
            f'<text x="{margin - 6}" y="{py(yv):.1f}" text-anchor="end" '
            f'font-size="10">{yv:.3g}</text>'
        )
        parts.append(
            f'<line x1="{margin}" y1="{py(yv):.1f}" x2="{width - margin}" y2="{py(yv):.1f}" '
            f'stroke="#dddddd"/>'
        )
    for idx, (label, (xs, ys)) in enumerate(series.items()):
        color = colors[idx % len(colors)]
        points = " ".join(
            f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys) if np.isfinite(y)
        )
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>'
        )
        parts.append(
            f'<text x="{width - margin - 4}" y="{margin + 14 + 14 * idx}" text-anchor="end" '
            f'font-size="11" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _best_cell_payload(reports, dimension, catalog) -> dict:
    best = selection.best_report(reports)
    retained_names = None
    mi_scores = None
    if best.retained is not None:
        retained_names = [n for n, keep in zip(catalog.names, best.retained) if keep]
    if best.mi_scores is not None:
        mi_scores = {n: float(s) for n, s in zip(catalog.names, best.mi_scores)}
    return {
        "protocol": best.protocol,
        "dimension": dimension,
        "threshold": best.threshold,
        "shift_s": best.shift_s,
        "val_ccc": best.val_ccc,
        "val_sse": best.val_sse,
        "n_features": best.n_features,
        "retained_names": retained_names,
        "mi_scores": mi_scores,
    }


def cmd_select(args, cfg: Config):
    corpus_dir = Path(args.corpus)
    out_dir = Path(args.out)
    features_dir = Path(args.features) if args.features else out_dir / "features"
    if args.thresholds:
        cfg.set("selection", "thresholds", args.thresholds)
    if args.shifts:
        cfg.set("selection", "shifts", args.shifts)
    if args.jobs:
        cfg.set("run", "jobs", args.jobs)
    partition = _load_partition(corpus_dir)
    catalog = feats.build_catalog()
    policy = cfg.get("corpus", "annotator")
    train, in_train = _build_split_sequences(
        corpus_dir, features_dir, partition.train, args.dimension, policy, catalog
    )
    val, in_val = _build_split_sequences(
        corpus_dir, features_dir, partition.validation, args.dimension, policy, catalog
    )
    reports = selection.sweep_protocol(
        args.protocol,
        train,
        val,
        model_config=cfg.model_config(),
        thresholds=cfg.floats("selection", "thresholds"),
        shifts=cfg.shift_config(),
        fixed_threshold=args.threshold,
        fixed_shift=args.shift,
        bins=int(cfg.get("selection", "bins")),
        n_jobs=int(cfg.get("run", "jobs")),
    )
    select_dir = out_dir / "select"
    select_dir.mkdir(parents=True, exist_ok=True)
    stem = f"sweep_{args.protocol}_{args.dimension}"
    sweep_path = select_dir / f"{stem}.csv"
    with open(sweep_path, "w", encoding="utf-8", newline="") as fh:
        selection.write_sweep_csv(reports, fh)
    best_path = select_dir / f"best_{args.protocol}_{args.dimension}.json"
    payload = _best_cell_payload(reports, args.dimension, catalog)
    best_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    outputs = [sweep_path, best_path]
    if args.svg and args.protocol in ("during", "none"):
        svg_path = select_dir / f"{stem}.svg"
        xs = [r.shift_s for r in reports]
        ys = [r.val_ccc for r in reports]
        svg_path.write_text(
            _svg_line_plot(
                {args.protocol: (xs, ys)},
                f"Validation CCC vs shift ({args.dimension})",
                "shift (s)",
                "CCC",
            ),
            encoding="utf-8",
        )
        outputs.append(svg_path)
    manifest = RunManifest(
        command=f"select {args.protocol} {args.dimension}",
        config=cfg.snapshot(),
        seed=int(cfg.get("model", "seed")),
    )
    manifest.add_inputs(in_train + in_val)
    for p in outputs:
        manifest.add_output(p)
    _write_manifest(out_dir, f"select_{args.protocol}_{args.dimension}", manifest)
    best = selection.best_report(reports)
    print(
        f"select[{args.protocol}/{args.dimension}]: {len(reports)} cells, best "
        f"ccc={best.val_ccc:.3f} threshold={best.threshold} shift={best.shift_s}s "
        f"features={best.n_features}"
    )
    return 0


# ---------------------------------------------------------------- train


def cmd_train(args, cfg: Config):
    corpus_dir = Path(args.corpus)
    out_dir = Path(args.out)
    features_dir = Path(args.features) if args.features else out_dir / "features"
    catalog = feats.build_catalog()
    policy = cfg.get("corpus", "annotator")
    partition = _load_partition(corpus_dir)
    threshold = args.threshold
    shift = args.shift if args.shift is not None else 0.0
    retained_names = None
    sel_inputs = []
    if args.selection:
        payload = json.loads(Path(args.selection).read_text(encoding="utf-8"))
        threshold = payload["threshold"]
        shift = payload["shift_s"]
        retained_names = payload["retained_names"]
        sel_inputs.append(Path(args.selection))
    train, in_train = _build_split_sequences(
        corpus_dir, features_dir, partition.train, args.dimension, policy, catalog
    )
    val, in_val = _build_split_sequences(
        corpus_dir, features_dir, partition.validation, args.dimension, policy, catalog
    )
    k = int(round(shift * corpus.FRAME_RATE))
    train_k = selection._shift_sequences(train, k)
    val_k = selection._shift_sequences(val, k)
    if retained_names is not None:
        name_set = set(retained_names)
        mask = np.array([n in name_set for n in catalog.names])
    elif threshold is not None:
        stacked = np.concatenate([s.features for s in train_k])
        labels = np.concatenate([s.targets for s in train_k])
        mask, _ = selection.mi_filter(stacked, labels, threshold)
    else:
        mask = np.ones(len(catalog), dtype=bool)
    if not mask.any():
        raise DataError("selection removed every feature; nothing to train on")
    masked_catalog = catalog.subset(mask)
    from dataclasses import replace as dc_replace

    train_m = [dc_replace(s, features=s.features[:, mask]) for s in train_k]
    val_m = [dc_replace(s, features=s.features[:, mask]) for s in val_k]
    config = cfg.model_config()
    model, history = mdl.train_blstm(
        train_m,
        val_m,
        config,
        catalog_digest=masked_catalog.digest(),
        feature_names=masked_catalog.names,
    )
    models_dir = out_dir / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = models_dir / f"{args.dimension}.ckpt"
    mdl.save_checkpoint(model, ckpt_path)
    history_path = models_dir / f"history_{args.dimension}.csv"
    with open(history_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,train_sse,val_sse\n")
        for row in history:
            fh.write(f"{row['epoch']},{row['train_sse']!r},{row['val_sse']!r}\n")
    manifest = RunManifest(
        command=f"train {args.dimension}", config=cfg.snapshot(), seed=config.seed
    )
    manifest.add_inputs(in_train + in_val + sel_inputs)
    manifest.add_output(ckpt_path)
    manifest.add_output(history_path)
    _write_manifest(out_dir, f"train_{args.dimension}", manifest)
    best = min(history, key=lambda r: r["val_sse"])
    print(
        f"train[{args.dimension}]: {len(history)} epochs, best val sse "
        f"{best['val_sse']:.4f} at epoch {best['epoch']}, {int(mask.sum())} features, "
        f"checkpoint {ckpt_path}"
    )
    return 0


# ---------------------------------------------------------------- eval


def _split_subjects(partition: corpus.Partition, split: str):
    return {
        "train": partition.train,
        "validation": partition.validation,
        "test": partition.test,
    }[split]


def cmd_eval(args, cfg: Config):
    corpus_dir = Path(args.corpus)
    out_dir = Path(args.out)
    features_dir = Path(args.features) if args.features else out_dir / "features"
    model_path = Path(args.model) if args.model else out_dir / "models" / f"{args.dimension}.ckpt"
    if not model_path.exists():
        raise DataError(f"no trained model at {model_path} (run `train` first)")
    catalog = feats.build_catalog()
    model = mdl.load_checkpoint(model_path)
    shift = args.shift
    if args.selection:
        payload = json.loads(Path(args.selection).read_text(encoding="utf-8"))
        shift = payload["shift_s"]
    if shift is None:
        shift = 0.0
    policy = cfg.get("corpus", "annotator")
    partition = _load_partition(corpus_dir)
    subjects = _split_subjects(partition, args.split)
    if not subjects:
        raise DataError(f"partition has no {args.split} subjects")
    sequences, inputs = _build_split_sequences(
        corpus_dir, features_dir, subjects, args.dimension, policy, catalog
    )
    k = int(round(shift * corpus.FRAME_RATE))
    sequences = selection._shift_sequences(sequences, k)
    if model.feature_names is not None:
        name_set = set(model.feature_names)
        mask = np.array([n in name_set for n in catalog.names])
        if int(mask.sum()) != len(model.feature_names):
            raise DataError("checkpoint feature names missing from the catalog")
    else:
        mask = np.ones(len(catalog), dtype=bool)
    preds, truth = [], []
    for seq in sequences:
        preds.append(mdl.predict(model, seq.features[:, mask]))
        truth.append(seq.targets)
    preds = np.concatenate(preds)
    truth = np.concatenate(truth)
    std = model.standardizer
    try:
        pcc_value = metrics.pcc(preds, truth)
    except ValueError as exc:
        raise NumericError(f"pcc undefined on this split: {exc}") from None
    report = metrics.EvalReport(
        dimension=args.dimension,
        ccc=metrics.ccc(preds, truth),
        pcc=pcc_value,
        sse=metrics.sse(std.apply_targets(preds), std.apply_targets(truth)),
        n_frames=preds.size,
    )
    eval_dir = out_dir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    eval_path = eval_dir / f"eval_{args.system}_{args.dimension}_{args.split}.csv"
    with open(eval_path, "w", encoding="utf-8", newline="") as fh:
        metrics.write_eval_csv(fh, [(args.system, args.dimension, args.split, report)])
    manifest = RunManifest(command=f"eval {args.dimension} {args.split}", config=cfg.snapshot())
    manifest.add_inputs(inputs + [model_path])
    manifest.add_output(eval_path)
    _write_manifest(out_dir, f"eval_{args.system}_{args.dimension}_{args.split}", manifest)
    print(
        f"eval[{args.system}/{args.dimension}/{args.split}]: ccc={report.ccc:.3f} "
        f"pcc={report.pcc:.3f} sse={report.sse:.4f} over {report.n_frames} frames"
    )
    return 0


# ---------------------------------------------------------------- fuse


def cmd_fuse(args, cfg: Config):
    eye_path = Path(args.eye)
    ext_path = Path(args.external)
    with open(eye_path, encoding="utf-8") as fh:
        eye = feats.read_feature_csv(fh)
    with open(ext_path, encoding="utf-8") as fh:
        external = feats.read_feature_csv(fh)
    fused = feats.fuse(eye, external, alignment=args.alignment)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        feats.write_feature_csv(fused, fh)
    print(
        f"fuse: {eye.values.shape[1]} + {external.values.shape[1]} -> "
        f"{fused.values.shape[1]} columns, {len(fused)} rows -> {out_path}"
    )
    return 0


# ---------------------------------------------------------------- baseline


def cmd_baseline_humans(args, cfg: Config):
    corpus_dir = Path(args.corpus)
    out_dir = Path(args.out)
    partition = _load_partition(corpus_dir)
    subjects = _split_subjects(partition, args.split)
    if not subjects:
        raise DataError(f"partition has no {args.split} subjects")
    per_subject = []
    for sid in sorted(subjects):
        traces = _load_traces(corpus_dir, args.dimension, sid)
        per_subject.append(metrics.human_baseline(traces))
        log.info("%s: mean pairwise ccc %.3f (%d annotators)", sid, per_subject[-1], len(traces))
    value = float(np.mean(per_subject))
    eval_dir = out_dir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    out_path = eval_dir / f"baseline_humans_{args.dimension}_{args.split}.csv"
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("system,dimension,split,mean_pairwise_ccc,n_subjects\n")
        fh.write(f"group-of-humans,{args.dimension},{args.split},{value!r},{len(per_subject)}\n")
    print(
        f"baseline-humans[{args.dimension}/{args.split}]: mean pairwise ccc {value:.3f} "
        f"over {len(per_subject)} subjects"
    )
    return 0


# ---------------------------------------------------------------- report


def cmd_report(args, cfg: Config):
    out_dir = Path(args.out)
    report_dir = out_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    sweep_paths = [Path(p) for p in args.sweeps]
    if not sweep_paths:
        sweep_paths = sorted((out_dir / "select").glob("sweep_*.csv"))
    if not sweep_paths:
        raise DataError("no sweep CSVs found; run `select` first or pass paths")
    all_reports = []
    manifest = RunManifest(command="report", config=cfg.snapshot())
    for path in sweep_paths:
        with open(path, encoding="utf-8") as fh:
            all_reports.append((path.stem, selection.read_sweep_csv(fh)))
        manifest.add_input(path)
    combined = report_dir / "sweep_all.csv"
    with open(combined, "w", encoding="utf-8", newline="") as fh:
        selection.write_sweep_csv([r for _, rs in all_reports for r in rs], fh)
    manifest.add_output(combined)
    shift_series = {}
    for stem, reports in all_reports:
        if reports and reports[0].protocol in ("during", "none"):
            shift_series[stem] = (
                [r.shift_s for r in reports],
                [r.val_ccc for r in reports],
            )
        else:
            table = report_dir / f"{stem}.txt"
            with open(table, "w", encoding="utf-8") as fh:
                fh.write(f"{'threshold':>10} {'features':>9} {'val_sse':>9} {'val_ccc':>9}\n")
                for r in reports:
                    thr = "none" if r.threshold is None else f"{r.threshold:g}"
                    fh.write(
                        f"{thr:>10} {r.n_features:>9d} {r.val_sse:>9.3f} {r.val_ccc:>9.3f}\n"
                    )
            manifest.add_output(table)
    if shift_series:
        svg_path = report_dir / "ccc_vs_shift.svg"
        svg_path.write_text(
            _svg_line_plot(shift_series, "Validation CCC vs shift", "shift (s)", "CCC"),
            encoding="utf-8",
        )
        manifest.add_output(svg_path)
    if len(shift_series) >= 2:
        # rank-sum comparison of the CCC-vs-shift curves, pairwise
        wilcoxon_path = report_dir / "wilcoxon.csv"
        with open(wilcoxon_path, "w", encoding="utf-8", newline="") as fh:
            fh.write("series_a,series_b,n_a,n_b,W,p\n")
            names = sorted(shift_series)
            for i, name_a in enumerate(names):
                for name_b in names[i + 1 :]:
                    a = np.array([v for v in shift_series[name_a][1] if np.isfinite(v)])
                    b = np.array([v for v in shift_series[name_b][1] if np.isfinite(v)])
                    if a.size == 0 or b.size == 0:
                        continue
                    w, p = metrics.wilcoxon_rank_sum(a, b)
                    fh.write(f"{name_a},{name_b},{a.size},{b.size},{w!r},{p!r}\n")
        manifest.add_output(wilcoxon_path)
    _write_manifest(out_dir, "report", manifest)
    print(f"report: {len(sweep_paths)} sweeps -> {report_dir}")
    return 0


# ---------------------------------------------------------------- main


def _common_flags() -> argparse.ArgumentParser:
    # shared by the main parser and every subparser, so global flags work
    # both before and after the subcommand; SUPPRESS keeps subparser
    # defaults from clobbering values parsed at the top level
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI config file")
    common.add_argument(
        "--set", action="append", default=argparse.SUPPRESS, metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="eyeaffect",
        description="Eye-based continuous affect prediction pipeline",
        parents=[common],
    )
    parser.add_argument("--version", action="version", version=f"eyeaffect {__version__}")
    parser.add_argument(
        "--show-config", action="store_true", help="print the effective config and exit"
    )
    sub = parser.add_subparsers(dest="command", parser_class=argparse.ArgumentParser)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--corpus", required=True, help="output corpus directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--subjects", type=int, default=12)
    p.add_argument("--minutes", type=float, default=2.0)
    p.add_argument("--lag", type=float, default=2.0, help="planted annotator delay (s)")
    p.add_argument("--train", type=int, default=8, help="training subjects")
    p.add_argument("--val", type=int, default=4, help="validation subjects")

    p = add_parser("ingest", help="parse and validate a corpus directory")
    p.add_argument("--corpus", required=True)

    p = add_parser("features", help="derive LLDs and extract feature matrices")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--dump-wavelet", type=int, metavar="FRAME",
        help="debug: dump each subject's pupil wavelet coefficients for the "
             "window ending at FRAME",
    )

    p = add_parser("select", help="run a feature-selection sweep protocol")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--features", help="features dir (default <out>/features)")
    p.add_argument("--dimension", choices=corpus.DIMENSIONS, default="arousal")
    p.add_argument("--protocol", choices=selection.PROTOCOLS, required=True)
    p.add_argument("--thresholds", help="comma list, e.g. 0.1,0.15,0.2")
    p.add_argument("--shifts", help="start:stop:step or comma list of seconds")
    p.add_argument("--threshold", type=float, help="fixed threshold for `during`")
    p.add_argument("--shift", type=float, help="fixed shift for `after`")
    p.add_argument("--jobs", help="parallel sweep cells")
    p.add_argument("--svg", action="store_true", help="also emit the CCC-vs-shift SVG")

    p = add_parser("train", help="train the final model for one dimension")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--features")
    p.add_argument("--dimension", choices=corpus.DIMENSIONS, default="arousal")
    p.add_argument("--selection", help="best-cell JSON from `select`")
    p.add_argument("--threshold", type=float, help="MI threshold (omit for none)")
    p.add_argument("--shift", type=float, help="label shift in seconds")

    p = add_parser("eval", help="evaluate a trained model on a split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--features")
    p.add_argument("--model", help="checkpoint path (default <out>/models/<dim>.ckpt)")
    p.add_argument("--dimension", choices=corpus.DIMENSIONS, default="arousal")
    p.add_argument("--split", choices=("train", "validation", "test"), default="validation")
    p.add_argument("--selection", help="best-cell JSON (for the label shift)")
    p.add_argument("--shift", type=float, help="label shift in seconds")
    p.add_argument("--system", default="eye", help="system name in the eval CSV")

    p = add_parser("fuse", help="early-fuse eye features with an external matrix")
    p.add_argument("--eye", required=True, help="eye feature CSV")
    p.add_argument("--external", required=True, help="external feature CSV (e.g. speech)")
    p.add_argument("--alignment", type=int, default=0, help="frame offset of external rows")
    p.add_argument("--out", required=True, help="fused CSV path")

    p = add_parser("baseline-humans", help="group-of-humans CCC baseline")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dimension", choices=corpus.DIMENSIONS, default="arousal")
    p.add_argument("--split", choices=("train", "validation", "test"), default="train")

    p = add_parser("report", help="combine sweep CSVs into tables and SVG")
    p.add_argument("--out", required=True)
    p.add_argument("sweeps", nargs="*", help="sweep CSV paths (default <out>/select/*)")

    return parser


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "features": cmd_features,
    "select": cmd_select,
    "train": cmd_train,
    "eval": cmd_eval,
    "fuse": cmd_fuse,
    "baseline-humans": cmd_baseline_humans,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.config = getattr(args, "config", None)
    args.set = getattr(args, "set", [])
    args.verbose = getattr(args, "verbose", False)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = Config(args.config, args.set)
        if args.show_config:
            print(cfg.dump(), end="")
            return 0
        if not args.command:
            parser.print_usage(sys.stderr)
            return 2
        return COMMANDS[args.command](args, cfg)
    except DataError as exc:
        print(f"error [{args.command or 'config'}]: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 4
    except PipelineError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
