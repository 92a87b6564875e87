"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
import urllib.error
import urllib.request
from dataclasses import replace
from pathlib import Path

from somnwave import __version__
from somnwave.config import load_config
from somnwave.edf import EdfFile, discover_recordings
from somnwave.evaluation import paired_t_test, wilcoxon_signed_rank, write_json
from somnwave.exceptions import (
    ChecksumMismatch,
    ConfigError,
    DataError,
    FoldMismatch,
    NetworkFailure,
)
from somnwave.features import FeatureMatrix, assemble_features
from somnwave.model.bundle import load_bundle, save_bundle
from somnwave.pipeline import (
    ExperimentResult,
    RunManifest,
    build_pipeline,
    bundle_payload,
    fit_pipeline,
    load_dataset,
    load_recording_epochs,
    run_experiment,
    score_psg,
    select_recordings,
)
from somnwave.preprocess import read_epoch_cache, write_epoch_cache
from somnwave.reports import results_table, write_hypnogram_csv, write_hypnogram_svg

logger = logging.getLogger("somnwave")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
GLOBAL_DEFAULTS = {"config": None, "seed": None, "jobs": None, "verbose": False}


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the CLI contract says 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- fetch ------------------------------------------------------------------

def _sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def _download(url, retries, backoff):
    last = None
    for attempt in range(retries + 1):
        try:
            with urllib.request.urlopen(url, timeout=60) as resp:
                return resp.read()
        except (urllib.error.URLError, OSError) as exc:
            last = exc
            if attempt < retries:
                time.sleep(backoff * 2 ** attempt)
    raise NetworkFailure(f"{url}: {last}")


def fetch_files(manifest_path, out_dir, retries=3, backoff=1.0):
    """Download manifest entries, skipping files whose checksum already matches.

    The manifest is JSON: ``{"files": [{"url": ..., "sha256": ..., "path": ...}]}``
    (``path`` defaults to the URL's last component). Returns the number of
    downloads performed.
    """
    entries = json.loads(Path(manifest_path).read_text()).get("files", [])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    downloads = 0
    for entry in entries:
        url, digest = entry["url"], entry["sha256"].lower()
        target = out_dir / entry.get("path", url.rstrip("/").rsplit("/", 1)[-1])
        if target.exists() and _sha256_bytes(target.read_bytes()) == digest:
            continue
        for attempt in range(2):
            data = _download(url, retries, backoff)
            downloads += 1
            if _sha256_bytes(data) == digest:
                break
            logger.warning("%s: checksum mismatch (attempt %d)", target.name, attempt + 1)
        else:
            raise ChecksumMismatch(f"{target.name}: downloaded bytes do not match sha256")
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(target.name + ".part")
        tmp.write_bytes(data)
        tmp.replace(target)
    return downloads


def cmd_fetch(args, cfg):
    n = fetch_files(args.manifest, args.out, args.retries, args.backoff)
    print(f"fetched {n} file(s)")


# --- inspect ------------------------------------------------------------------

def cmd_inspect(args, cfg):
    edf = EdfFile(args.edf)
    h = edf.header
    info = {
        "file": edf.name,
        "format": "EDF+" if h.is_edf_plus else "EDF",
        "start": h.start_datetime.isoformat() if h.start_datetime else None,
        "n_records": h.n_records,
        "record_duration_s": float(h.record_duration_s),
        "duration_s": float(h.duration_s()),
        "signals": [{"label": s.label,
                     "fs": float(s.samples_per_record / h.record_duration_s)
                     if h.record_duration_s else None,
                     "unit": s.physical_dim} for s in h.signals],
    }
    if h.is_edf_plus:
        events = edf.annotations()
        counts = {}
        for ev in events:
            if not ev.label:
                continue  # timekeeping TAL
            counts[ev.label] = counts.get(ev.label, 0) + 1
        info["annotations"] = dict(sorted(counts.items()))
    if args.json:
        print(json.dumps(info, indent=2))
        return
    print(f"{info['file']}  {info['format']}  start={info['start']}  "
          f"records={h.n_records} x {float(h.record_duration_s):g} s")
    for s in info["signals"]:
        rate = f"{s['fs']:>8g} Hz" if s["fs"] is not None else "       - Hz"
        print(f"  {s['label']:<24} {rate}  {s['unit']}")
    for label, n in info.get("annotations", {}).items():
        print(f"  annotation {label!r}: {n}")


# --- preprocess / features -----------------------------------------------------

def _recordings(cfg, args):
    data_dir = Path(args.data_dir) if args.data_dir else cfg.data_dir()
    recs = select_recordings(discover_recordings(data_dir), cfg.data.max_subjects)
    if not recs:
        raise DataError(f"no PSG/hypnogram pairs found under {data_dir}")
    return recs


def cmd_preprocess(args, cfg):
    epochs = []
    for rec in _recordings(cfg, args):
        kept, stats = load_recording_epochs(rec, cfg)
        logger.info("%s: %s", rec.key, stats)
        epochs.extend(kept)
    path, index = write_epoch_cache(args.out, epochs)
    print(f"wrote {len(epochs)} epochs to {path} (index {index})")


def cmd_features(args, cfg):
    if args.cache:
        fm = assemble_features(read_epoch_cache(args.cache), cfg.features.dwt, cfg.features.cwt)
    else:
        fm = load_dataset(cfg, args.data_dir).features
    fm.to_csv(args.out)
    print(f"wrote {len(fm)} x {len(fm.columns)} features to {args.out}")


# --- run ----------------------------------------------------------------------

def _write_output(manifest, path, writer):
    writer(path)
    manifest.add_output(path)
    return path


def cmd_run(args, cfg):
    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.to_dict())
    t0 = time.perf_counter()
    if args.features:
        fm = FeatureMatrix.from_csv(args.features)
        manifest.add_inputs([args.features])
    else:
        data = load_dataset(cfg, args.data_dir)
        fm = data.features
        manifest.add_inputs(data.inputs)
    manifest.time("load_features", t0)

    t0 = time.perf_counter()
    result = run_experiment(cfg, fm)
    manifest.time("evaluate", t0)

    metrics = {"config": cfg.to_dict(), "manifest": "manifest.json", "software_version":
               __version__, **result.to_dict()}
    _write_output(manifest, out / "metrics.json", lambda p: write_json(metrics, p))
    for rep in result.reports:
        _write_output(manifest, out / f"confusion_{rep.fold}.csv", rep.confusion.to_csv)
    summary = result.summary()
    table = results_table([{"method": f"ensemble ({result.mode})", "channel":
                            cfg.data.channel.replace("EEG ", ""), **summary}])
    _write_output(manifest, out / "table.txt", lambda p: Path(p).write_text(table))

    if cfg.output.bundle:
        t0 = time.perf_counter()
        pipe = fit_pipeline(build_pipeline(cfg), fm)
        payload = bundle_payload(pipe, cfg, fm.columns)
        _write_output(manifest, out / "model.somn", lambda p: save_bundle(p, payload))
        if payload["selection"] is not None:
            _write_output(manifest, out / "rfecv_curve.csv", payload["selection"].curve_to_csv)
        manifest.time("final_fit", t0)
    manifest.write(out / "manifest.json")
    print(table, end="")
    print(f"kappa {summary['kappa']:.3f}; majority baseline accuracy "
          f"{100 * summary['majority_accuracy']:.2f}%")


# --- score / compare ------------------------------------------------------------

def cmd_score(args, cfg):
    payload = load_bundle(args.model)
    night = score_psg(args.psg, payload, args.channel)
    write_hypnogram_csv(args.out, night.stages, night.proba, night.classes,
                        artifact=night.artifact, indices=night.indices)
    if args.svg:
        write_hypnogram_svg(args.svg, night.stages, title=Path(args.psg).name)
    print(f"scored {len(night.stages)} epochs -> {args.out}")


def _fold_scores(path, metric):
    data = json.loads(Path(path).read_text())
    result = ExperimentResult.from_dict(data)
    return {r.fold: getattr(r, metric) for r in result.reports}


def compare_reports(path_a, path_b, test="wilcoxon", metric="accuracy"):
    a = _fold_scores(path_a, metric)
    b = _fold_scores(path_b, metric)
    if set(a) != set(b):
        raise FoldMismatch(f"fold ids differ: {sorted(a)} vs {sorted(b)}")
    folds = sorted(a)
    xa = [a[f] for f in folds]
    xb = [b[f] for f in folds]
    if test == "wilcoxon":
        return wilcoxon_signed_rank(xa, xb)
    if len(folds) < 2:
        raise DataError("the paired t-test needs at least two folds")
    return paired_t_test(xa, xb)


def cmd_compare(args, cfg):
    report = compare_reports(args.report_a, args.report_b, args.test, args.metric)
    if args.out:
        write_json(report.to_dict(), args.out)
    print(f"{report.test}: statistic={report.statistic:.6g} p={report.p_value:.6g} "
          f"n={report.n} -> {report.verdict()} at alpha=0.05")


# --- parser -----------------------------------------------------------------------

def build_parser():
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="TOML pipeline configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the configured seed")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS,
                        help="worker processes for recording loading")
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)
    parser = _Parser(prog="somnwave", description="Single-channel EEG sleep staging.",
                     parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help):
        return sub.add_parser(name, help=help, parents=[common])

    p = command("fetch", help="download files listed in a checksum manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--retries", type=int, default=3)
    p.add_argument("--backoff", type=float, default=1.0, help="initial retry delay (s)")
    p.set_defaults(func=cmd_fetch)

    p = command("inspect", help="print an EDF header summary")
    p.add_argument("edf")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = command("preprocess", help="filter, epoch and cache all recordings")
    p.add_argument("--data-dir")
    p.add_argument("--out", required=True, help="epoch cache path")
    p.set_defaults(func=cmd_preprocess)

    p = command("features", help="write the epoch feature matrix as CSV")
    p.add_argument("--data-dir")
    p.add_argument("--cache", help="read epochs from a preprocess cache")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = command("run", help="evaluate the pipeline and save a model bundle")
    p.add_argument("--data-dir")
    p.add_argument("--features", help="feature CSV from the features command")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_run)

    p = command("score", help="stage a PSG file with a saved model")
    p.add_argument("psg")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="hypnogram CSV")
    p.add_argument("--svg", help="optional hypnogram SVG")
    p.add_argument("--channel")
    p.set_defaults(func=cmd_score)

    p = command("compare", help="paired significance test on per-fold metrics")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--test", choices=("wilcoxon", "t"), default="wilcoxon")
    p.add_argument("--metric", choices=("accuracy", "macro_f1", "kappa"), default="accuracy")
    p.add_argument("--out", help="write the SignificanceReport JSON here")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    # filled here, not via set_defaults: the shared parent actions would let a
    # subparser default overwrite a flag given before the subcommand
    for name, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, value)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed).validate()
        if args.jobs is not None:
            cfg = replace(cfg, jobs=args.jobs).validate()
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"somnwave: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"somnwave: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"somnwave: I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit code 3
        logger.debug("internal error", exc_info=True)
        print(f"somnwave: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
