"""Command-line front end.

Datasets live in directories holding a ``manifest.json``::

    {"version": 1, "kind": "vectors" | "wav" | "lms", "provenance": ...,
     "items": [{"id": ..., "label": int | null, "path": str | null}, ...],
     "features": "features.csv"        # vectors only
     "failures": [...]}                # extract only

Item paths are relative to the manifest's directory.  Labels CSVs hold one
``id,label`` line per item with no header.

Exit codes: 0 success, 1 partial failure, 2 invalid input, config or run.
Errors are reported on stderr as one JSON object per line.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from importlib import resources
from pathlib import Path

import numpy as np

from scenecluster.datasets import LabeledDataset, subsample_imbalanced, synth_blobs, synth_scenes
from scenecluster.errors import ClusteringError
from scenecluster.features import LmsConfig, extract_lms, load_lms, read_wav, save_lms, write_wav
from scenecluster.joint import ClusteringResult, JointConfig, run, run_fixed_features
from scenecluster.metrics import evaluate
from scenecluster.network import NetworkConfig, prepare_inputs, save_params

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1
PROFILES = ("desk", "paper")


class InputError(ClusteringError):
    """Bad paths, file formats or flag combinations."""


def _err(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)


def _warn(message: str) -> None:
    print(json.dumps({"warning": message}, sort_keys=True), file=sys.stderr)


def _fmt(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else ("inf" if x > 0 else "-inf")


# --- configuration ----------------------------------------------------------


def load_profile(name_or_path: str | None) -> dict:
    """Shipped profile by name, or a JSON config file; the 'paper' profile (reference scale) by default."""
    name = name_or_path or "paper"
    if name in PROFILES:
        text = resources.files("scenecluster").joinpath("profiles", f"{name}.json").read_text()
    else:
        p = Path(name)
        if not p.is_file():
            raise InputError(f"config not found: {name}")
        text = p.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) - {"lms", "network", "joint"}:
        raise InputError("config must be an object with sections lms, network, joint")
    return doc


def build_configs(doc: dict, args=None) -> tuple[LmsConfig, JointConfig]:
    """Validate every section (with flag overrides) before any compute starts."""
    joint = dict(doc.get("joint", {}))
    if args is not None:
        for flag, key in (("nc_min", "nc_min"), ("nc_max", "nc_max"),
                          ("unrolled_steps", "unrolled_steps"), ("seed", "seed")):
            value = getattr(args, flag, None)
            if value is not None:
                joint[key] = value
    try:
        lms = LmsConfig.from_dict(doc.get("lms", {}))
        net = NetworkConfig.from_dict(doc.get("network", {}))
        joint["network"] = net
        cfg = JointConfig(**joint)
    except TypeError as exc:
        raise InputError(f"unknown or missing config field: {exc}") from exc
    if net.input_shape[1] != lms.n_mel:
        raise InputError(f"network expects {net.input_shape[1]} mel bands but lms.n_mel = {lms.n_mel}")
    return lms, cfg


def parse_ks(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        values = [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise InputError(f"--ks must be an integer or comma-separated list, got {text!r}") from exc
    if not values or min(values) < 1:
        raise InputError("--ks values must be positive")
    return values


# --- dataset files ----------------------------------------------------------


def write_labels(path: Path, ids, labels) -> None:
    with open(path, "w") as fh:
        for i, lab in zip(ids, labels):
            fh.write(f"{i},{int(lab)}\n")


def read_labels(path) -> tuple[list[str], list]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"labels file not found: {path}")
    ids, labels = [], []
    for n, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2 or not parts[0] or not parts[1].strip():
            raise InputError(f"{path}:{n}: expected 'id,label'")
        ids.append(parts[0])
        labels.append(parts[1].strip())
    if not ids:
        raise InputError(f"{path}: no labels")
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate ids")
    try:
        labels = [int(v) for v in labels]
    except ValueError:
        pass
    return ids, labels


def write_manifest(out: Path, kind: str, ds: LabeledDataset, extra: dict | None = None) -> None:
    items = []
    for m, i in enumerate(ds.ids):
        items.append({
            "id": i,
            "label": None if ds.labels is None else int(ds.labels[m]),
            "path": ds.paths[m] if ds.paths else None,
        })
    doc = {"version": MANIFEST_VERSION, "kind": kind, "provenance": ds.provenance, "items": items}
    doc.update(extra or {})
    (out / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if ds.labels is not None:
        write_labels(out / "labels.csv", ds.ids, ds.labels)


def read_manifest(path) -> tuple[dict, Path]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
        kind = doc["kind"]
        items = doc["items"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"malformed manifest {path}: {exc}") from exc
    if doc.get("version") != MANIFEST_VERSION:
        raise InputError(f"manifest version {doc.get('version')} is not {MANIFEST_VERSION}")
    if kind not in ("vectors", "wav", "lms") or not isinstance(items, list):
        raise InputError(f"malformed manifest {path}")
    return doc, path.parent


def load_dataset(path) -> tuple[LabeledDataset, str]:
    """Dataset from a manifest, or a bare CSV feature matrix (one row per item)."""
    path = Path(path)
    if path.suffix == ".csv" and path.is_file():
        X = _read_matrix(path)
        return LabeledDataset([f"item{m:05d}" for m in range(X.shape[0])], features=X, provenance="csv"), "vectors"
    doc, root = read_manifest(path)
    items = doc["items"]
    ids = [it["id"] for it in items]
    labels = [it.get("label") for it in items]
    labels = None if any(v is None for v in labels) else np.array(labels)
    kind = doc["kind"]
    features = None
    paths = []
    if kind == "vectors":
        features = _read_matrix(root / doc.get("features", "features.csv"))
        if features.shape[0] != len(ids):
            raise InputError(f"features have {features.shape[0]} rows but manifest lists {len(ids)} items")
    else:
        paths = [str(root / it["path"]) for it in items]
    try:
        ds = LabeledDataset(ids, labels=labels, features=features, paths=paths,
                            provenance=doc.get("provenance", "synthetic"))
    except ClusteringError as exc:
        raise InputError(str(exc)) from exc
    return ds, kind


def _read_matrix(path) -> np.ndarray:
    if not Path(path).is_file():
        raise InputError(f"feature file not found: {path}")
    try:
        X = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise InputError(f"malformed feature CSV {path}: {exc}") from exc
    if not np.all(np.isfinite(X)):
        raise InputError(f"non-finite values in {path}")
    return X


def _write_matrix(path, X) -> None:
    np.savetxt(path, X, delimiter=",", fmt="%.17g")


def _relative_paths(ds: LabeledDataset, out: Path) -> LabeledDataset:
    if ds.paths:
        ds.paths = [os.path.relpath(p, out) for p in ds.paths]
    return ds


# --- commands -----------------------------------------------------------------


def _extract_one(job):
    src, dst, lms_dict = job
    try:
        feat = extract_lms(read_wav(src), LmsConfig.from_dict(lms_dict))
        save_lms(feat, dst)
        return None
    except (ClusteringError, OSError, EOFError) as exc:
        return str(exc)


def cmd_extract(args) -> int:
    lms, _ = build_configs(load_profile(args.config))
    src = Path(args.wav_dir)
    if not src.is_dir():
        raise InputError(f"not a directory: {src}")
    if (src / MANIFEST).is_file():
        doc, _ = read_manifest(src)
        if doc["kind"] != "wav":
            raise InputError(f"{src / MANIFEST} does not list WAV files")
        entries = [(it["id"], src / it["path"], it.get("label")) for it in doc["items"]]
    else:
        entries = [(p.stem, p, None) for p in sorted(src.glob("*.wav"))]
    out = Path(args.out)
    (out / "features").mkdir(parents=True, exist_ok=True)
    jobs = [(str(p), str(out / "features" / f"{i}.csv"), asdict(lms)) for i, p, _ in entries]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            errors = list(pool.map(_extract_one, jobs))
    else:
        errors = [_extract_one(j) for j in jobs]
    items, failures = [], []
    for (i, p, lab), e in zip(entries, errors):
        if e is None:
            items.append({"id": i, "label": lab, "path": f"features/{i}.csv"})
        else:
            failures.append({"id": i, "file": str(p), "error": e})
            _err("extract", e, file=str(p))
    doc = {"version": MANIFEST_VERSION, "kind": "lms", "provenance": "wav", "items": items,
           "failures": failures, "config": asdict(lms)}
    (out / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if items and all(it["label"] is not None for it in items):
        write_labels(out / "labels.csv", [it["id"] for it in items], [it["label"] for it in items])
    if not entries:
        _warn(f"no WAV files in {src}")
    return 1 if failures else 0


def cmd_synth_blobs(args) -> int:
    ds = synth_blobs(args.clusters, args.per_cluster, dim=args.dim, separation=args.separation, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix(out / "features.csv", ds.features)
    write_manifest(out, "vectors", ds, {"features": "features.csv", "centres": ds.meta["centres"]})
    return 0


def cmd_synth_scenes(args) -> int:
    ds = synth_scenes(args.classes, args.per_class, seed=args.seed)
    out = Path(args.out)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    paths = []
    for i, sig in zip(ds.ids, ds.signals):
        write_wav(out / "wav" / f"{i}.wav", sig)
        paths.append(f"wav/{i}.wav")
    ds.paths = paths
    write_manifest(out, "wav", ds)
    return 0


def cmd_subsample(args) -> int:
    ds, kind = load_dataset(args.dataset)
    if ds.labels is None:
        raise InputError("subsampling needs a labeled dataset")
    sub = subsample_imbalanced(ds, args.r_min, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {}
    if kind == "vectors":
        _write_matrix(out / "features.csv", sub.features)
        extra["features"] = "features.csv"
    write_manifest(out, kind, _relative_paths(sub, out), extra)
    return 0


def _cluster_inputs(ds: LabeledDataset, kind: str, cfg: JointConfig, fixed: bool):
    if kind == "wav":
        raise InputError("dataset lists WAV files; run 'extract' first")
    if kind == "vectors":
        if not fixed:
            raise InputError("vector datasets have no LMS input for the network; pass --fixed-features")
        return ds.features
    feats = [load_lms(p) for p in ds.paths]
    inputs = prepare_inputs(feats, cfg.network.input_shape)
    return inputs.reshape(inputs.shape[0], -1) if fixed else inputs


def _write_result(out: Path, ds: LabeledDataset, res: ClusteringResult, cfg: JointConfig, fixed: bool) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    write_labels(out / "labels.csv", ds.ids, res.labels)
    (out / "trace.jsonl").write_text(res.trace.to_jsonl())
    _write_matrix(out / "embeddings.csv", res.embeddings)
    if res.params is not None:
        save_params(res.params, out / "params.bin")
    snaps = out / "snapshots"
    snaps.mkdir(exist_ok=True)
    for nc, labels in sorted(res.trace.snapshots.items()):
        write_labels(snaps / f"labels_nc{nc:03d}.csv", ds.ids, labels)
    by_count = {e.n_clusters: e for e in res.trace.entries if e.n_clusters in res.trace.snapshots}
    header = "n_clusters,a_intra,a_inter,gamma" + (",nmi,ca" if ds.labels is not None else "")
    lines = [header]
    for nc in sorted(res.trace.snapshots):
        e = by_count[nc]
        row = [str(nc)] + ["" if v is None else _fmt(v) for v in (e.a_intra, e.a_inter, e.gamma)]
        if ds.labels is not None:
            m = evaluate(ds.labels, res.trace.snapshots[nc])
            row += [_fmt(m["nmi"]), _fmt(m["ca"])]
        lines.append(",".join(row))
    (out / "counts.csv").write_text("\n".join(lines) + "\n")
    summary = {
        "k_s": cfg.k_s,
        "n_clusters_star": res.n_clusters_star,
        "gamma_star": _fmt(res.gamma_star),
        "tau": res.tau,
        "mode": "fixed-features" if fixed else "joint",
        "update_losses": [_fmt(v) for v in res.trace.update_losses],
        "config": cfg.to_dict(),
    }
    if ds.labels is not None:
        summary["metrics"] = evaluate(ds.labels, res.labels)
    (out / "result.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_cluster(args) -> int:
    _, cfg = build_configs(load_profile(args.config), args)
    ks_list = parse_ks(args.ks) or [cfg.k_s]
    ds, kind = load_dataset(args.input)
    X = _cluster_inputs(ds, kind, cfg, args.fixed_features)
    for k in ks_list:
        cfg_k = replace(cfg, k_s=k)
        cfg_k.check_size(len(ds), strict=args.fixed_features)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sweep = len(ks_list) > 1
    rows, failed = [], 0
    for k in ks_list:
        cfg_k = replace(cfg, k_s=k)
        try:
            res = run_fixed_features(X, cfg_k) if args.fixed_features else run(X, cfg_k)
        except ClusteringError as exc:
            if not sweep:
                raise
            failed += 1
            _err(type(exc).__name__, str(exc), k_s=k)
            continue
        summary = _write_result(out / f"ks_{k:03d}" if sweep else out, ds, res, cfg_k, args.fixed_features)
        rows.append(summary)
    if sweep:
        labeled = ds.labels is not None
        lines = ["k_s,n_clusters_star,gamma_star" + (",nmi,ca" if labeled else "")]
        for s in rows:
            row = [str(s["k_s"]), str(s["n_clusters_star"]), s["gamma_star"]]
            if labeled:
                row += [_fmt(s["metrics"]["nmi"]), _fmt(s["metrics"]["ca"])]
            lines.append(",".join(row))
        (out / "summary.csv").write_text("\n".join(lines) + "\n")
    if failed:
        return 2 if not rows else 1
    return 0


def cmd_evaluate(args) -> int:
    true_ids, true_labels = read_labels(args.true_labels)
    pred_ids, pred_labels = read_labels(args.pred_labels)
    if len(true_ids) != len(pred_ids):
        raise InputError(f"label files differ in length: {len(true_ids)} vs {len(pred_ids)}")
    pred = dict(zip(pred_ids, pred_labels))
    missing = [i for i in true_ids if i not in pred]
    if missing:
        raise InputError(f"{len(missing)} ids have no prediction, e.g. {missing[0]!r}")
    report = evaluate(np.array(true_labels), np.array([pred[i] for i in true_ids]))
    text = json.dumps(report, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


# --- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scenecluster", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("extract", help="log mel spectra for a directory of WAV files")
    s.add_argument("wav_dir")
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="profile name (desk, paper) or JSON file")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("synth-blobs", help="planted Gaussian blobs")
    s.add_argument("--clusters", type=int, default=5)
    s.add_argument("--per-cluster", type=int, default=40)
    s.add_argument("--dim", type=int, default=2)
    s.add_argument("--separation", type=float, default=10.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_blobs)

    s = sub.add_parser("synth-scenes", help="synthetic scene recordings as WAV files")
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--per-class", type=int, default=25)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_scenes)

    s = sub.add_parser("subsample", help="imbalanced class subsampling")
    s.add_argument("dataset")
    s.add_argument("--r-min", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_subsample)

    s = sub.add_parser("cluster", help="joint training and clustering, or clustering of fixed features")
    s.add_argument("input", help="dataset directory, manifest, or feature CSV")
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="profile name (desk, paper) or JSON file")
    s.add_argument("--ks", help="neighbour count, or comma-separated list for a sweep")
    s.add_argument("--nc-min", type=int)
    s.add_argument("--nc-max", type=int)
    s.add_argument("--unrolled-steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--fixed-features", action="store_true", help="cluster the input features directly")
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("evaluate", help="NMI and clustering accuracy of a labels CSV")
    s.add_argument("true_labels")
    s.add_argument("pred_labels")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ClusteringError as exc:
        _err(type(exc).__name__, str(exc))
        return 2
    except OSError as exc:
        _err("OSError", str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
