"""Command-line entry point: ``creagen <command> [options]``.

Commands run the pipeline stage by stage::

    synth -> train -> sample -> metrics -> select-sets -> analyze -> report

Each command writes its outputs plus one ``manifest.json`` into ``--out``.
Options can come from a master JSON config (``--config``) whose sections are
named after the commands (``"synth"``, ``"train"``, ``"select_sets"`` ...) plus
a top-level ``"seed"``; flags win over file values. The seed falls back to the
``CREAGEN_SEED`` environment variable, then 0.

Exit codes: 0 success, 1 invalid input or config, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import traceback
from pathlib import Path

from . import __version__
from .errors import ValidationError

EXIT_OK, EXIT_INVALID, EXIT_FAILURE = 0, 1, 2

DEFAULTS = {
    "synth": {"n": 4157, "size": 64, "augment": 5, "val_every": 10},
    "train": {},  # TrainConfig defaults
    "sample": {"n": 10000, "chunk": None, "zero_z": False},
    "metrics": {"k": 10, "classifier_epochs": 2, "classifier": None},
    "select_sets": {"size": 100},
    "analyze": {"name": "model", "n_raters": 5},
    "gradcheck": {"tolerance": 1e-4, "seeds": 1},
    "report": {},
}


# ------------------------------------------------------------ config plumbing
def _load_master(path):
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as err:
        raise ValidationError(f"--config: cannot read {path}: {err}") from None
    except json.JSONDecodeError as err:
        raise ValidationError(f"--config: {path} is not valid JSON: {err}") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"--config: {path} must hold a JSON object")
    return doc


def _resolve(args, section: str, keys) -> dict:
    """defaults <- master config section <- explicit flags."""
    master = _load_master(args.config)
    sec = master.get(section, {})
    if not isinstance(sec, dict):
        raise ValidationError(f"config section {section!r} must be an object")
    eff = dict(DEFAULTS.get(section, {}))
    eff.update(sec)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            eff[k] = v
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = sec.get("seed", master.get("seed"))
    if seed is None:
        env = os.environ.get("CREAGEN_SEED")
        if env is not None:
            try:
                seed = int(env)
            except ValueError:
                raise ValidationError(f"CREAGEN_SEED must be an integer, got {env!r}") from None
    eff["seed"] = int(seed) if seed is not None else 0
    return eff


def _require_dir(path, what: str, must_contain: str = None) -> Path:
    if path is None:
        raise ValidationError(f"--{what} is required")
    p = Path(path)
    if not p.is_dir():
        raise ValidationError(f"--{what}: directory not found: {p}")
    if must_contain and not (p / must_contain).is_file():
        raise ValidationError(f"--{what}: {p / must_contain} not found")
    return p


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _canonical(config: dict) -> str:
    return json.dumps(config, sort_keys=True, indent=2, default=str) + "\n"


class Run:
    """Tracks one command's outputs and writes its manifest."""

    def __init__(self, command: str, out: Path, config: dict, inputs: dict):
        self.command = command
        self.out = Path(out)
        self.config = config
        self.inputs = {k: str(v) for k, v in inputs.items() if v is not None}
        self.outputs: list = []
        self.start = time.perf_counter()
        self.out.mkdir(parents=True, exist_ok=True)
        self.add(_write(self.out / "config.json", _canonical(config)))

    def add(self, path) -> Path:
        self.outputs.append(str(Path(path).relative_to(self.out)))
        return Path(path)

    def write(self, name: str, text: str) -> Path:
        return self.add(_write(self.out / name, text))

    def manifest(self, status: str, error: str = None) -> None:
        config_bytes = (self.out / "config.json").read_bytes()
        doc = {
            "command": self.command,
            "config_hash": hashlib.sha256(config_bytes).hexdigest(),
            "seed": self.config.get("seed"),
            "inputs": self.inputs,
            "outputs": sorted(set(self.outputs)),
            "status": status,
            "tool_version": __version__,
            "wall_time_seconds": round(time.perf_counter() - self.start, 3),
            "argv": sys.argv[1:],
        }
        if error:
            doc["error"] = error
        _write(self.out / "manifest.json", json.dumps(doc, sort_keys=True, indent=2) + "\n")


# ------------------------------------------------------------------ commands
def cmd_synth(args) -> Run:
    from .synth import expected_cell_counts, generate_dataset, save_dataset

    cfg = _resolve(args, "synth", ("n", "size", "augment", "val_every"))
    if cfg["size"] not in (32, 64):
        raise ValidationError(f"size must be 32 or 64, got {cfg['size']}")
    if cfg["n"] < 49:
        raise ValidationError(f"n must be at least 49 (one item per shape x texture cell), got {cfg['n']}")
    if cfg["augment"] < 1:
        raise ValidationError(f"augment must be >= 1, got {cfg['augment']}")
    run = Run("synth", args.out, cfg, {})
    ds = generate_dataset(cfg["n"], cfg["size"], cfg["augment"], cfg["seed"], cfg["val_every"])
    save_dataset(ds, run.out)
    run.outputs += ["images/", "masks/", "index.csv", "meta.json"]
    lo, hi = expected_cell_counts(cfg["n"])
    print(f"synth: {len(ds)} images ({cfg['n']} base items, {lo}-{hi} per class cell) -> {run.out}")
    return run


TRAIN_FLAGS = (
    "arch",
    "size",
    "iterations",
    "batch_size",
    "lr",
    "creativity",
    "creativity_branch",
    "lambda_Dr",
    "lambda_Db",
    "lambda_Gr",
    "lambda_Ge",
    "lambda_rec",
    "g_loss",
    "dtype",
    "width_scale",
    "checkpoint_every",
    "keep_checkpoints",
)


def cmd_train(args) -> Run:
    from .synth import load_dataset
    from .trainer import TrainConfig, train

    cfg = _resolve(args, "train", TRAIN_FLAGS)
    if args.branches is not None:
        cfg["branches"] = [b for b in args.branches.split(",") if b]
    data = _require_dir(args.data, "data", "index.csv")
    tc = TrainConfig.from_dict(cfg)
    ds = load_dataset(data)
    run = Run("train", args.out, tc.to_dict(), {"data": data})

    def progress(it, comps):
        if args.verbose and (it % 50 == 0 or it == 1):
            print(f"  iter {it}: L_D={comps['L_D']:.4f} L_G={comps['L_G']:.4f}", file=sys.stderr)

    try:
        result = train(tc, ds, run.out, progress=progress, clock=time.perf_counter)
    finally:
        for p in sorted((run.out / "checkpoints").glob("*.ckpt")) if (run.out / "checkpoints").is_dir() else []:
            run.add(p)
    run.write("train_log.csv", result.log.to_csv())
    run.write("timing.csv", result.log.timing_csv())
    final = result.checkpoints[-1]
    print(f"train: {tc.iterations} iterations, final checkpoint {final}")
    return run


def _latest_checkpoint(path: Path) -> Path:
    if path.is_file():
        return path
    ckdir = path / "checkpoints" if (path / "checkpoints").is_dir() else path
    found = sorted(ckdir.glob("*.ckpt"))
    if not found:
        raise ValidationError(f"--checkpoint: no .ckpt files in {path}")
    return found[-1]


def cmd_sample(args) -> Run:
    import numpy as np
    from PIL import Image

    from .synth import load_dataset
    from .trainer import load_generator, sample

    cfg = _resolve(args, "sample", ("n", "chunk", "zero_z"))
    if args.checkpoint is None:
        raise ValidationError("--checkpoint is required")
    ck = _latest_checkpoint(Path(args.checkpoint))
    if cfg["n"] < 1:
        raise ValidationError(f"n must be >= 1, got {cfg['n']}")
    G, tc = load_generator(ck)
    masks = mask_ids = None
    if tc.arch == "stylegan":
        mdir = _require_dir(args.masks_from, "masks-from", "index.csv")
        mds = load_dataset(mdir)
        if not mds.has_masks:
            raise ValidationError(f"--masks-from: {mdir} has no masks/ directory")
        pool = mds.indices("val") if len(mds.indices("val")) else np.arange(len(mds))
        rng = np.random.default_rng(np.random.SeedSequence([cfg["seed"], 11]))
        mask_ids = np.sort(rng.choice(pool, cfg["n"], replace=len(pool) < cfg["n"]))
        masks = mds.masks[mask_ids]
    run = Run("sample", args.out, cfg, {"checkpoint": ck, "masks_from": args.masks_from})
    images = sample((G, tc), cfg["n"], cfg["seed"], masks=masks, zero_z=cfg["zero_z"], chunk=cfg["chunk"])
    (run.out / "images").mkdir(exist_ok=True)
    rows = ["id,mask_id"]
    for i, img in enumerate(images):
        Image.fromarray(np.round(img * 255).astype(np.uint8), mode="RGB").save(run.out / "images" / f"{i:06d}.png")
        rows.append(f"{i},{'' if mask_ids is None else int(mask_ids[i])}")
    run.outputs.append("images/")
    run.write("index.csv", "\n".join(rows) + "\n")
    run.write("meta.json", json.dumps({"arch": tc.arch, "count": len(images), "size": tc.size}, sort_keys=True, indent=2) + "\n")
    print(f"sample: {len(images)} images -> {run.out / 'images'}")
    return run


def read_sample_dir(path: Path):
    """(ids, images in [0, 1]) from a sample directory."""
    import csv

    import numpy as np
    from PIL import Image

    index = path / "index.csv"
    if not index.is_file():
        raise ValidationError(f"{index}: index.csv not found")
    with open(index, newline="") as fh:
        reader = csv.DictReader(fh)
        if "id" not in (reader.fieldnames or []):
            raise ValidationError(f"{index}: missing 'id' column")
        ids = [int(r["id"]) for r in reader]
    images = []
    for i in ids:
        p = path / "images" / f"{i:06d}.png"
        if not p.is_file():
            raise ValidationError(f"{index}: image for id {i} missing ({p})")
        with Image.open(p) as im:
            images.append(np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0)
    return np.asarray(ids, dtype=np.int64), np.stack(images)


def cmd_metrics(args) -> Run:
    from .metrics import ClassifierBundle, compute_metrics, train_classifier
    from .synth import load_dataset

    cfg = _resolve(args, "metrics", ("k", "classifier_epochs", "classifier"))
    samples = _require_dir(args.samples, "samples")
    ids, images = read_sample_dir(samples)
    data = _require_dir(args.data, "data", "index.csv")
    ds = load_dataset(data)
    run = Run("metrics", args.out, cfg, {"samples": samples, "data": data})
    if cfg["classifier"] and Path(cfg["classifier"]).is_file():
        bundle = ClassifierBundle.load(cfg["classifier"])
    else:
        bundle = train_classifier(ds, seed=cfg["seed"], epochs=cfg["classifier_epochs"])
        run.add(bundle.save(run.out / "classifier.ckpt"))
    if bundle.spec.size != images.shape[1]:
        raise ValidationError(f"classifier works on {bundle.spec.size}px images, samples are {images.shape[1]}px")
    train_feats = bundle.features(ds.float_images(ds.indices("train")))
    report = compute_metrics(images, bundle, train_feats, ids=ids, k=cfg["k"])
    report.summary["shape_names"] = list(ds.shape_names)
    report.summary["texture_names"] = list(ds.texture_names)
    run.write("metrics.csv", report.to_csv())
    run.write("summary.json", report.summary_json())
    s = report.summary
    print(
        f"metrics: {len(report)} images; C_shape {s['mean_shape_confusion']:.4f} C_tex {s['mean_texture_confusion']:.4f} "
        f"IS_shape {s['inception_shape']:.4f} IS_tex {s['inception_texture']:.4f} NN {s['mean_nn_distance']:.4f}"
    )
    for w in bundle.warnings:
        print(f"warning: classifier: {w}", file=sys.stderr)
    return run


def _read_metrics_dir(path: Path):
    from .metrics import MetricReport

    summary = {}
    if (path / "summary.json").is_file():
        summary = json.loads((path / "summary.json").read_text())
    metrics_csv = path / "metrics.csv"
    if not metrics_csv.is_file():
        raise ValidationError(f"{metrics_csv}: metrics.csv not found")
    return MetricReport.read_csv(metrics_csv, summary)


def cmd_select_sets(args) -> Run:
    from .evalsets import save_galleries, select_sets, sets_to_json

    cfg = _resolve(args, "select_sets", ("size",))
    mdir = _require_dir(args.metrics, "metrics")
    report = _read_metrics_dir(mdir)
    run = Run("select-sets", args.out, cfg, {"metrics": mdir, "samples": args.samples})
    sets = select_sets(report, size=cfg["size"], seed=cfg["seed"])
    run.write("sets.json", sets_to_json(sets, {"population": len(report), "size": cfg["size"], "seed": cfg["seed"]}))
    if args.samples is not None:
        ids, images = read_sample_dir(_require_dir(args.samples, "samples"))
        for p in save_galleries(sets, images, ids, run.out / "galleries"):
            run.add(p)
    print(f"select-sets: {len(sets)} sets of {cfg['size']} from {len(report)} images")
    return run


def _set_means(sets: dict, agg) -> dict:
    import numpy as np

    return {name: float(np.mean(agg.subset(ids).question("q1"))) for name, ids in sets.items() if len(agg.subset(ids).image_ids)}


def cmd_analyze(args) -> Run:
    import numpy as np

    from . import analysis as A
    from .evalsets import read_sets

    cfg = _resolve(args, "analyze", ("name", "n_raters"))
    mdir = _require_dir(args.metrics, "metrics")
    sdir = _require_dir(args.sets, "sets", "sets.json")
    report = _read_metrics_dir(mdir)
    sets = read_sets(sdir / "sets.json")
    if args.ratings is None and not args.simulate_ratings:
        raise ValidationError("give --ratings FILE or --simulate-ratings")
    run = Run("analyze", args.out, cfg, {"metrics": mdir, "sets": sdir, "ratings": args.ratings})
    rated_ids = sorted({i for ids in sets.values() for i in ids})
    if args.ratings is not None:
        agg = A.ingest_ratings(args.ratings)
    else:
        pos = {int(i): r for r, i in enumerate(report.ids)}
        rows = [pos[i] for i in rated_ids]
        cols = {c: report.column(c)[rows] for c in ("shape_confusion", "texture_confusion", "nn_distance", "darkness", "avg_intensity", "skewness")}
        records = A.simulate_ratings(cols, rated_ids, cfg["n_raters"], cfg["seed"])
        run.write("ratings_simulated.csv", A.write_rating_records(records))
        agg = A.aggregate_records(records)
    run.write("ratings_aggregated.csv", agg.to_csv())

    metric_names = ("shape_confusion", "texture_confusion", "nn_distance", "darkness", "avg_intensity", "skewness")
    metric_cols = {m: report.column(m) for m in metric_names}
    random_ids = sets.get("random", rated_ids)
    rand = agg.subset(random_ids)
    corr = A.correlation_matrix(report.ids, metric_cols, rand.image_ids, rand.columns())
    run.write("correlations.csv", corr.to_csv())
    auto = A.correlation_matrix(agg.image_ids, agg.columns())
    run.write("question_autocorrelation.csv", auto.to_csv())

    pca_sets = [s for s in ("random", "low_shape_entropy", "mixed_low_shape_entropy_high_nn") if s in sets]
    pca_ids = sorted({i for s in pca_sets for i in sets[s]})
    pos = {int(i): r for r, i in enumerate(report.ids)}
    mat = np.stack([report.column(m)[[pos[i] for i in pca_ids]] for m in metric_names], axis=1)
    res = A.pca(mat, 2)
    load_csv, proj_csv = res.to_csv(metric_names, pca_ids)
    run.write("pca_loadings.csv", load_csv)
    run.write("pca_projections.csv", proj_csv)

    rated = agg.subset(rated_ids)
    novelty = float(report.summary.get("mean_nn_distance", np.mean(report.nn_distance)))
    per_model = {cfg["name"]: (novelty, float(np.mean(rated.question("q1"))))}
    set_means = {cfg["name"]: _set_means(sets, agg)}
    for spec in args.compare or []:
        name, m2, s2, r2 = _parse_compare(spec)
        rep2 = _read_metrics_dir(m2)
        agg2 = A.ingest_ratings(r2)
        sets2 = read_sets(s2 / "sets.json")
        ids2 = sorted({i for ids in sets2.values() for i in ids})
        per_model[name] = (float(rep2.summary.get("mean_nn_distance", np.mean(rep2.nn_distance))), float(np.mean(agg2.subset(ids2).question("q1"))))
        set_means[name] = _set_means(sets2, agg2)
    run.write("wundt.csv", A.wundt_csv(A.wundt_data(per_model)))

    lines = ["model_a,model_b,n_sets,t,p,mean_difference"]
    names = sorted(set_means)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            common = [s for s in set_means[a] if s in set_means[b]]
            try:
                t = A.paired_ttest([set_means[a][s] for s in common], [set_means[b][s] for s in common])
                lines.append(f"{a},{b},{t.n},{t.t!r},{t.p!r},{t.mean_difference!r}")
            except ValidationError as err:
                lines.append(f"{a},{b},{len(common)},,,{err}")
    run.write("ttests.csv", "\n".join(lines) + "\n")
    flags = {"images_not_rated_by_5": [int(i) for i in agg.flagged], "correlation_undefined": [list(p) for p in corr.undefined]}
    run.write("flags.json", json.dumps(flags, sort_keys=True, indent=2) + "\n")
    print(f"analyze: {len(agg.image_ids)} rated images, {corr.n_aligned} in the correlation table, PCA explains {res.explained_ratio.sum():.3f}")
    return run


def _parse_compare(spec: str):
    parts = spec.split(":")
    if len(parts) != 4:
        raise ValidationError(f"--compare expects NAME:METRICS_DIR:SETS_DIR:RATINGS_CSV, got {spec!r}")
    name, m, s, r = parts
    return name, _require_dir(m, "compare metrics"), _require_dir(s, "compare sets", "sets.json"), r


def cmd_gradcheck(args) -> Run:
    from .gradsuite import run_suite

    cfg = _resolve(args, "gradcheck", ("tolerance", "seeds"))
    run = Run("gradcheck", args.out, cfg, {})
    results = run_suite(seeds=range(cfg["seed"], cfg["seed"] + cfg["seeds"]), tolerance=cfg["tolerance"])
    lines = ["check,seed,max_rel_error,passed"]
    for name, seed, report in results:
        lines.append(f"{name},{seed},{report.max_rel_error!r},{int(report.passed)}")
        print(f"{'PASS' if report.passed else 'FAIL'} {name} seed={seed} max_rel_error={report.max_rel_error:.3e}")
    run.write("gradcheck.csv", "\n".join(lines) + "\n")
    failed = [r for r in results if not r[2].passed]
    print(f"gradcheck: {len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        run.failed = True
    return run


def cmd_report(args) -> Run:
    from .report import build_report

    cfg = _resolve(args, "report", ())
    dirs = {k: getattr(args, k) for k in ("train", "metrics", "sets", "analysis")}
    for k, v in dirs.items():
        if v is not None:
            _require_dir(v, k)
    run = Run("report", args.out, cfg, dirs)
    for p in build_report(run.out, **{k: (Path(v) if v else None) for k, v in dirs.items()}):
        run.add(p)
    print(f"report: {run.out / 'report.md'}")
    return run


# ------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="creagen", description="Creativity-loss GAN laboratory on a synthetic shape x texture dataset.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--config", help="master JSON config")
        sp.add_argument("--seed", type=int, help="seed (falls back to config, then CREAGEN_SEED, then 0)")
        sp.add_argument("--threads", type=int, help="cap BLAS worker threads")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("synth", help="render the synthetic labeled dataset")
    common(sp)
    sp.add_argument("--n", type=int, help="number of base items (default 4157)")
    sp.add_argument("--size", type=int, help="canvas size, 32 or 64")
    sp.add_argument("--augment", type=int, help="entries per base item: itself plus jittered copies (default 5)")
    sp.add_argument("--val-every", dest="val_every", type=int, help="every k-th pass over the class grid goes to validation")

    sp = sub.add_parser("train", help="train a GAN")
    common(sp)
    sp.add_argument("--data", help="dataset directory from `synth`")
    sp.add_argument("--arch", choices=("dcgan", "stackgan2", "stylegan"))
    sp.add_argument("--size", type=int)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--creativity", help="none | can | mce | kl | bhattacharyya | renyi(a) | tsallis(a) | sm(a,b)")
    sp.add_argument("--creativity-branch", dest="creativity_branch", choices=("shape", "texture", "shape_texture"))
    sp.add_argument("--branches", help="comma-separated discriminator heads (shape,texture); empty for none")
    for name in ("lambda_Dr", "lambda_Db", "lambda_Gr", "lambda_Ge", "lambda_rec"):
        sp.add_argument(f"--{name.replace('_', '-').lower()}", dest=name, type=float)
    sp.add_argument("--g-loss", dest="g_loss", choices=("minimax", "nonsaturating"))
    sp.add_argument("--dtype", choices=("float32", "float64"))
    sp.add_argument("--width-scale", dest="width_scale", type=float)
    sp.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    sp.add_argument("--keep-checkpoints", dest="keep_checkpoints", type=int)

    sp = sub.add_parser("sample", help="generate images from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", help="checkpoint file or training directory (latest checkpoint is used)")
    sp.add_argument("--n", type=int)
    sp.add_argument("--chunk", type=int, help="generation batch size (default: training batch size)")
    sp.add_argument("--masks-from", dest="masks_from", help="dataset directory supplying masks (stylegan)")
    sp.add_argument("--zero-z", dest="zero_z", action="store_const", const=True, help="use z = 0 for every image")

    sp = sub.add_parser("metrics", help="compute the automatic metrics for a sample directory")
    common(sp)
    sp.add_argument("--samples", help="sample directory")
    sp.add_argument("--data", help="training dataset directory (classifier and NN features)")
    sp.add_argument("--classifier", help="classifier checkpoint to reuse; trained when absent")
    sp.add_argument("--classifier-epochs", dest="classifier_epochs", type=int)
    sp.add_argument("--k", type=int, help="neighbours for the NN distance (default 10)")

    sp = sub.add_parser("select-sets", help="pick the 8 evaluation sets")
    common(sp)
    sp.add_argument("--metrics", help="metrics directory")
    sp.add_argument("--samples", help="sample directory, for galleries")
    sp.add_argument("--size", type=int, help="images per set (default 100)")

    sp = sub.add_parser("analyze", help="correlations, PCA, Wundt data and t-tests")
    common(sp)
    sp.add_argument("--metrics", help="metrics directory")
    sp.add_argument("--sets", help="select-sets directory")
    sp.add_argument("--ratings", help="ratings CSV: image_id,rater_id,q1,q2,q3,q4,q5,q6")
    sp.add_argument("--simulate-ratings", dest="simulate_ratings", action="store_true", help="generate synthetic ratings instead")
    sp.add_argument("--n-raters", dest="n_raters", type=int)
    sp.add_argument("--name", help="model name in the Wundt table")
    sp.add_argument("--compare", action="append", help="NAME:METRICS_DIR:SETS_DIR:RATINGS_CSV of another model (repeatable)")

    sp = sub.add_parser("gradcheck", help="finite-difference checks over all layers and losses")
    common(sp)
    sp.add_argument("--tolerance", type=float)
    sp.add_argument("--seeds", type=int, help="number of seeds per check")

    sp = sub.add_parser("report", help="markdown report with figures")
    common(sp)
    for name in ("train", "metrics", "sets", "analysis"):
        sp.add_argument(f"--{name}", help=f"{name} output directory")
    return p


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "sample": cmd_sample,
    "metrics": cmd_metrics,
    "select-sets": cmd_select_sets,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_INVALID
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    run = None
    try:
        run = COMMANDS[args.command](args)
        failed = getattr(run, "failed", False)
        run.manifest("failed" if failed else "complete")
        return EXIT_FAILURE if failed else EXIT_OK
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        _mark_failed(args, err)
        return EXIT_INVALID
    except Exception as err:  # noqa: BLE001 - top-level boundary
        if args.verbose:
            traceback.print_exc()
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        _mark_failed(args, err)
        return EXIT_FAILURE


def _mark_failed(args, err: Exception) -> None:
    """Write a 'failed' manifest when the command had already started writing outputs."""
    out = Path(args.out) if getattr(args, "out", None) else None
    if out is not None and (out / "config.json").is_file():
        _partial_run(args.command, out).manifest("failed", f"{type(err).__name__}: {err}")


def _partial_run(command: str, out: Path) -> Run:
    run = Run.__new__(Run)
    run.command = command
    run.out = out
    run.config = json.loads((out / "config.json").read_text())
    run.inputs = {}
    run.outputs = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    run.start = time.perf_counter()
    return run


if __name__ == "__main__":
    sys.exit(main())
