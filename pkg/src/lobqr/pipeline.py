"""File-based pipeline stages behind the CLI.

Every stage reads its inputs from, and writes its outputs to, one run
directory; nothing is handed over in memory, so any stage can be rerun in
isolation.  All floats are written with 17 significant digits and JSON is
key-sorted, which makes reruns byte-identical for a given config and seed.

Artifacts (per horizon k):

    config.canonical.ini               canonical dump of the active config
    data.csv                           snapshot stream (ingest CSV schema)
    labels_k{k}.csv                    end_ts_ns,k,r_long_adj,r_short_adj,r_mid,r_spread
    model_k{k}.ckpt                    network checkpoint (binary)
    history_k{k}.json                  training loss history
    predictions_{split}_{side}_k{k}.csv   ts,target,q25,q50,q75 (rearranged fan)
    weights_k{k}.csv                   side,tau,weight (validation-fitted)
    combined_test_{side}_k{k}.csv      ts,target,prediction
    report_k{k}.json / report_k{k}.csv evaluation report and flat mirror
    report.json / report.csv           consolidated horizon grid (full-run)
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from . import combine as combine_mod
from . import evaluation, ingest, labeling, synthgen
from .baselines import ARModel, MLPModel, repetitive_predict
from .config import RunConfig
from .errors import LockHeld, MissingArtifact
from .labeling import SIDES, SampleSet
from .model import DeepLOBQR, QuantileFan, rearrange

LOCK_NAME = ".lobqr.lock"


# ---------------------------------------------------------------------------
# locking and small io helpers


class run_lock:
    """One run per output directory; the lock file holds the owner pid."""

    def __init__(self, out_dir: Path):
        self.path = Path(out_dir) / LOCK_NAME

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockHeld(f"lock file {self.path} exists; another run owns this directory") from None
        with os.fdopen(fd, "w") as f:
            f.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{stage}: required artifact {path} is missing; run the producing stage first")
    return path


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
        f.write("\n")


def _write_canonical_config(cfg: RunConfig, out: Path) -> None:
    (out / "config.canonical.ini").write_text(cfg.to_canonical_text(), encoding="utf-8")


def _quantile_headers(taus) -> list[str]:
    return [f"q{t * 100:g}" for t in taus]


# ---------------------------------------------------------------------------
# shared data assembly


def _load_stream(cfg: RunConfig, out: Path, stage: str):
    path = _require(out / "data.csv", stage)
    return ingest.parse_stream(path, cfg.gen_config().tick_size)


def _assemble(cfg: RunConfig, arr, k: int):
    """Windows, labels and gap-separated splits for one horizon."""
    model_cfg = cfg.model_config(k)
    norm = ingest.normalize(arr.features(), cfg.w_norm, cfg.epsilon_std)
    windows = ingest.make_windows(norm, model_cfg.T)
    samples = labeling.label_stream(arr, windows, k)
    ranges = ingest.chronological_split(len(samples), cfg.split_spec(), gap=model_cfg.T + k)
    return model_cfg, samples, ranges


def _split_sets(cfg: RunConfig, samples: SampleSet, ranges) -> dict[str, SampleSet]:
    """Train/val thinned by sample_stride (windows overlap heavily); test full."""
    stride = cfg.sample_stride
    train_idx = np.arange(ranges.train[0], ranges.train[1], stride)
    val_idx = np.arange(ranges.validation[0], ranges.validation[1], stride)
    return {
        "train": samples.select(train_idx),
        "val": samples.select(val_idx),
        "test": samples.slice(*ranges.test),
    }


# ---------------------------------------------------------------------------
# stages


def stage_gen(cfg: RunConfig, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    _write_canonical_config(cfg, out)
    arr = synthgen.generate(cfg.gen_config())
    ingest.write_stream_csv(out / "data.csv", arr)
    return out / "data.csv"


def stage_label(cfg: RunConfig, out: Path, k: int) -> Path:
    arr, _report = _load_stream(cfg, out, "label")
    _, samples, _ = _assemble(cfg, arr, k)
    path = out / f"labels_k{k}.csv"
    labeling.write_labels_csv(path, samples)
    return path


def stage_train(cfg: RunConfig, out: Path, k: int) -> Path:
    arr, _report = _load_stream(cfg, out, "train")
    model_cfg, samples, ranges = _assemble(cfg, arr, k)
    sets = _split_sets(cfg, samples, ranges)
    model = DeepLOBQR(model_cfg)
    history = model.train(sets["train"], sets["val"])
    ckpt = out / f"model_k{k}.ckpt"
    model.save(ckpt)
    _write_json(out / f"history_k{k}.json", history.as_dict())
    return ckpt


def stage_predict(cfg: RunConfig, out: Path, k: int) -> list[Path]:
    ckpt = _require(out / f"model_k{k}.ckpt", "predict")
    model = DeepLOBQR.load(ckpt)
    arr, _report = _load_stream(cfg, out, "predict")
    _, samples, ranges = _assemble(cfg, arr, k)
    paths = []
    for split, rng in (("val", ranges.validation), ("test", ranges.test)):
        subset = samples.slice(*rng)
        fan = rearrange(model.predict(subset))
        headers = _quantile_headers(fan.taus)
        for side in SIDES:
            path = out / f"predictions_{split}_{side}_k{k}.csv"
            est = fan.estimates(side)
            target = subset.target(side)
            with open(path, "w", encoding="utf-8") as f:
                f.write("ts,target," + ",".join(headers) + "\n")
                for i in range(len(subset)):
                    row = ",".join(_fmt(v) for v in est[i])
                    f.write(f"{subset.end_ts[i]},{_fmt(target[i])},{row}\n")
            paths.append(path)
    return paths


def _read_predictions(path: Path) -> dict[str, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=np.float64)
    data = np.atleast_1d(data)
    return {name: np.asarray(data[name]) for name in data.dtype.names}


def _fan_matrix(pred: dict[str, np.ndarray]) -> np.ndarray:
    cols = [name for name in pred if name.startswith("q")]
    return np.column_stack([pred[c] for c in cols])


def stage_combine(cfg: RunConfig, out: Path, k: int) -> list[Path]:
    taus = cfg.model_config(k).quantiles
    val, test = {}, {}
    for side in SIDES:
        val[side] = _read_predictions(_require(out / f"predictions_val_{side}_k{k}.csv", "combine"))
        test[side] = _read_predictions(_require(out / f"predictions_test_{side}_k{k}.csv", "combine"))

    weights = combine_mod.fit_combination(
        _fan_matrix(val["long"]),
        _fan_matrix(val["short"]),
        val["long"]["target"],
        val["short"]["target"],
        taus,
    )
    wpath = out / f"weights_k{k}.csv"
    with open(wpath, "w", encoding="utf-8") as f:
        f.write("side,tau,weight\n")
        for side in SIDES:
            for tau, w in zip(taus, weights.weights(side)):
                f.write(f"{side},{_fmt(tau)},{_fmt(w)}\n")

    if cfg.combine_mode == "rolling":
        # horizons count event steps, so rolling needs the samples' stream
        # indices back; rebuild them and join on the written timestamps
        arr, _ = _load_stream(cfg, out, "combine")
        _, samples, _ = _assemble(cfg, arr, k)
        index_of_ts = dict(zip(samples.end_ts.tolist(), samples.end_indices.tolist()))

    paths = [wpath]
    for side in SIDES:
        if cfg.combine_mode == "static":
            combined = combine_mod.combine_fixed(_fan_matrix(test[side]), weights.weights(side))
        else:
            est = np.vstack([_fan_matrix(val[side]), _fan_matrix(test[side])])
            realized = np.concatenate([val[side]["target"], test[side]["target"]])
            ts_all = np.concatenate([val[side]["ts"], test[side]["ts"]]).astype(np.int64)
            end_indices = np.array([index_of_ts[int(t)] for t in ts_all], dtype=np.int64)
            combined = combine_mod.rolling_combine(
                est, realized, end_indices, k, cfg.rolling_window, len(val[side]["target"])
            )
        path = out / f"combined_test_{side}_k{k}.csv"
        with open(path, "w", encoding="utf-8") as f:
            f.write("ts,target,prediction\n")
            for ts, tgt, pred in zip(test[side]["ts"], test[side]["target"], combined):
                f.write(f"{int(ts)},{_fmt(tgt)},{_fmt(pred)}\n")
        paths.append(path)
    return paths


def stage_evaluate(cfg: RunConfig, out: Path, k: int) -> Path:
    arr, parse_report = _load_stream(cfg, out, "evaluate")
    model_cfg, samples, ranges = _assemble(cfg, arr, k)
    sets = _split_sets(cfg, samples, ranges)
    test = sets["test"]

    fans, combined = {}, {}
    for side in SIDES:
        pred = _read_predictions(_require(out / f"predictions_test_{side}_k{k}.csv", "evaluate"))
        if len(pred["ts"]) != len(test) or not np.array_equal(pred["ts"].astype(np.int64), test.end_ts):
            raise MissingArtifact(f"evaluate: predictions for side {side} do not align with the test split")
        fans[side] = _fan_matrix(pred)
        cpath = out / f"combined_test_{side}_k{k}.csv"
        if cpath.exists():
            combined[side] = _read_predictions(cpath)["prediction"]

    ar = ARModel(p=cfg.ar_order).fit(sets["train"])
    mlp = MLPModel(cfg.mlp_config(), input_dim=test.windows.shape[1] * test.windows.shape[2])
    mlp.train(sets["train"], sets["val"])

    predictions: dict[str, dict[str, np.ndarray]] = {
        "repetitive": repetitive_predict(test),
        "ar": ar.predict(test),
        "mlp": mlp.predict(test),
    }
    median_col = list(model_cfg.quantiles).index(0.5) if 0.5 in model_cfg.quantiles else len(model_cfg.quantiles) // 2
    predictions["deeplob_qr"] = {side: fans[side][:, median_col] for side in SIDES}
    if combined:
        predictions["deeplob_qr_c"] = {side: combined[side] for side in SIDES}

    report: dict = {
        "k": k,
        "parse": parse_report.as_dict(),
        "split_sizes": {name: len(s) for name, s in sets.items()},
        "sides": {},
    }
    for side in SIDES:
        target = test.target(side)
        rep_metrics = evaluation.point_metrics(predictions["repetitive"][side], target)
        models = {}
        for name, preds in predictions.items():
            raw = evaluation.point_metrics(preds[side], target)
            models[name] = {
                "raw": raw.as_dict(),
                "normalized": evaluation.normalize_metrics(raw, rep_metrics).as_dict(),
            }
        cal = evaluation.coverage(fans[side], target, model_cfg.quantiles)
        report["sides"][side] = {"models": models, "calibration": cal.as_dict()}

    ks = evaluation.ks_two_sample(test.target_long, -test.target_short)
    wil = evaluation.wilcoxon_signed_rank(test.target_long, -test.target_short)
    report["asymmetry"] = {
        "ks": {"statistic": ks.statistic, "pvalue": ks.pvalue},
        "wilcoxon": {
            "statistic": wil.statistic,
            "pvalue": wil.pvalue,
            "degenerate": wil.degenerate,
        },
    }

    _write_json(out / f"report_k{k}.json", report)
    _write_report_csv(out / f"report_k{k}.csv", {k: report})
    return out / f"report_k{k}.json"


def _write_report_csv(path: Path, reports: dict[int, dict]) -> None:
    """Flat mirror for spreadsheet diffing: one metric per row."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("k,side,model,kind,metric,value\n")
        for k in sorted(reports):
            report = reports[k]
            for side in SIDES:
                for model, kinds in sorted(report["sides"][side]["models"].items()):
                    for kind in ("raw", "normalized"):
                        for metric in ("mae", "mse", "meae", "r2"):
                            value = kinds[kind][metric]
                            txt = "" if value is None else _fmt(value)
                            f.write(f"{k},{side},{model},{kind},{metric},{txt}\n")
                cal = report["sides"][side]["calibration"]
                for tau, cov in zip(cal["taus"], cal["coverage"]):
                    f.write(f"{k},{side},fan,calibration,cov_q{tau * 100:g},{_fmt(cov)}\n")
                for lo, hi, cov in cal["intervals"]:
                    f.write(f"{k},{side},fan,calibration,interval_q{lo * 100:g}_q{hi * 100:g},{_fmt(cov)}\n")


def full_run(cfg: RunConfig, out: Path) -> Path:
    """Chain every stage for every horizon and consolidate the reports."""
    stage_gen(cfg, out)
    reports = {}
    for k in cfg.horizons:
        stage_label(cfg, out, k)
        stage_train(cfg, out, k)
        stage_predict(cfg, out, k)
        stage_combine(cfg, out, k)
        stage_evaluate(cfg, out, k)
        with open(out / f"report_k{k}.json", encoding="utf-8") as f:
            reports[k] = json.load(f)
    consolidated = {
        "horizons": {str(k): reports[k] for k in cfg.horizons},
        "degradation": _degradation_summary(reports),
    }
    _write_json(out / "report.json", consolidated)
    _write_report_csv(out / "report.csv", reports)
    return out / "report.json"


def _degradation_summary(reports: dict[int, dict]) -> dict:
    """Normalized MAE across horizons per side/model; reported, not asserted."""
    summary: dict = {}
    for side in SIDES:
        summary[side] = {}
        for model in ("deeplob_qr", "deeplob_qr_c"):
            series = {}
            for k, report in sorted(reports.items()):
                entry = report["sides"][side]["models"].get(model)
                if entry:
                    series[str(k)] = entry["normalized"]["mae"]
            summary[side][model] = series
    return summary
