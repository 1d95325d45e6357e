"""Command-line entry points.

Subcommands: synth, sample, train, eval, simulate, serve, export, and
pipeline (synth -> sample -> train -> eval -> export in one run). Every
run writes a manifest (arguments, config hash, seed, versions) next to
its outputs so results are reproducible.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .crowd import CrowdStore, relation_to_choice, simulate
from .hourglass import Model, config_from_text, config_to_text, desk_config
from .metrics import write_report
from .sampling import PairQuery, SamplerConfig, read_pairs, relation_from_depth, write_pairs
from .synthetic import make_dataset, read_depth
from .train import (TrainConfig, evaluate, load_dataset, predict_scores, train)


def write_manifest(out_dir, command: str, args: dict, seed=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {k: v for k, v in sorted(args.items()) if k != "func"}
    blob = json.dumps(payload, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "args": payload,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "seed": seed,
        "versions": {
            "depthrank": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return path


def _sampler_config(args, width=None, height=None) -> SamplerConfig:
    return SamplerConfig(
        width=width if width is not None else args.width,
        height=height if height is not None else args.height,
        strategy=args.strategy,
        seed=args.seed,
        pairs_per_image=args.pairs_per_image,
        ratio_threshold=args.ratio_thresh,
        mix=getattr(args, "mix", 0.5),
    )


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    cfg = _sampler_config(args)
    manifest = make_dataset(args.out, args.n_images, cfg,
                            pairs_per_image=args.pairs_per_image,
                            seed=args.scene_seed, max_objects=args.max_objects)
    write_manifest(args.out, "synth", vars(args), seed=args.seed)
    print(f"wrote {len(manifest.image_ids)} scenes and {manifest.n_pairs} pairs to {args.out}")
    return 0


def cmd_sample(args) -> int:
    depths_dir = Path(args.depths)
    rasters = sorted(depths_dir.glob("dep_*.dmp"))
    if not rasters:
        print(f"error: no dep_*.dmp rasters under {depths_dir}", file=sys.stderr)
        return 1
    first = read_depth(rasters[0])
    cfg = _sampler_config(args, width=first.shape[1], height=first.shape[0])
    rng = np.random.default_rng(args.seed)
    records = []
    from .sampling import sample_pair
    for raster in rasters:
        image_id = raster.stem[len("dep_"):]
        depth = read_depth(raster)
        for _ in range(args.pairs_per_image):
            q = sample_pair(cfg, rng)
            r = relation_from_depth(depth, q.i, q.j, args.ratio_thresh)
            records.append((image_id, PairQuery(q.i, q.j, r)))
    write_pairs(args.out, records)
    write_manifest(Path(args.out).parent, "sample", vars(args), seed=args.seed)
    print(f"wrote {len(records)} pairs to {args.out}")
    return 0


def _load_model_config(args):
    if args.config:
        config, extras = config_from_text(Path(args.config).read_text())
    else:
        config, extras = desk_config(), {}
    return config, extras


def cmd_train(args) -> int:
    config, extras = _load_model_config(args)
    tc = TrainConfig(
        epochs=args.epochs if args.epochs is not None else int(extras.get("train.epochs", 5)),
        batch_size=args.batch if args.batch is not None else int(extras.get("train.batch", 4)),
        lr=args.lr if args.lr is not None else float(extras.get("train.lr", 1e-3)),
        seed=args.seed,
        loss=args.loss,
    )
    samples = load_dataset(args.data, args.pairs, with_depth=(args.loss == "logmse"))
    model = Model(config, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    history = train(model, samples, tc)
    if args.finetune_epochs:
        history2 = train(model, samples, TrainConfig(
            epochs=args.finetune_epochs, batch_size=tc.batch_size,
            lr=args.finetune_lr, seed=tc.seed + 1, loss=tc.loss))
        history.epoch_losses.extend(history2.epoch_losses)
        history.seconds += history2.seconds
    model.save(out / "model.ckpt")
    (out / "model.cfg").write_text(config_to_text(config, {
        "train.epochs": tc.epochs, "train.batch": tc.batch_size, "train.lr": tc.lr}))
    history.save(out / "loss_curve.csv")
    write_manifest(out, "train", vars(args), seed=args.seed)
    print(f"trained {tc.epochs}+{args.finetune_epochs or 0} epochs in "
          f"{history.seconds:.1f}s; final loss {history.epoch_losses[-1]:.5f}; "
          f"checkpoint at {out / 'model.ckpt'}")
    return 0


def _scores_for(args, records, val_records):
    ids = {image_id for image_id, _ in records}
    if val_records:
        ids |= {image_id for image_id, _ in val_records}
    if args.pred:
        scores = {}
        for raster in sorted(Path(args.pred).glob("*.dmp")):
            image_id = raster.stem
            if image_id.startswith(("pred_", "dep_")):
                image_id = image_id.split("_", 1)[1]
            scores[image_id] = read_depth(raster)
        missing = ids - set(scores)
        if missing:
            raise FileNotFoundError(f"no predictions for image ids: {sorted(missing)[:5]}")
        return scores
    config, _ = config_from_text(Path(args.model_config).read_text()) \
        if args.model_config else (desk_config(), {})
    model = Model(config, seed=0)
    model.load(args.ckpt)
    samples = [s for s in load_dataset(args.images) if s.image_id in ids]
    if args.val_images and Path(args.val_images) != Path(args.images):
        have = {s.image_id for s in samples}
        samples += [s for s in load_dataset(args.val_images)
                    if s.image_id in ids and s.image_id not in have]
    return predict_scores(model, samples)


def cmd_eval(args) -> int:
    records = read_pairs(args.pairs)
    val_records = read_pairs(args.val_pairs) if args.val_pairs else None
    scores = _scores_for(args, records, val_records)
    gt_depths = None
    if args.gt:
        gt_depths = {}
        for image_id in {image_id for image_id, _ in records}:
            gt_depths[image_id] = read_depth(Path(args.gt) / f"dep_{image_id}.dmp")
    result = evaluate(scores, records, val_records=val_records, tau=args.tau,
                      gt_depths=gt_depths)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    txt, js = write_report(result.report, out / "report")
    if args.dump_pred and not args.pred:
        from .synthetic import write_depth
        pred_dir = out / "pred"
        pred_dir.mkdir(exist_ok=True)
        for image_id, z in scores.items():
            write_depth(pred_dir / f"pred_{image_id}.dmp", z.astype(np.float32))
    write_manifest(out, "eval", vars(args), seed=None)
    print(txt.read_text().rstrip())
    print(f"report written to {txt} and {js}")
    return 0


def cmd_simulate(args) -> int:
    rng = np.random.default_rng(args.seed)
    gt = rng.choice([1, -1], size=args.trials)
    report = simulate(gt, n_workers=args.workers, error_rate=args.error,
                      hard_rate=args.hard, p_gold=args.p_gold, n_gold=args.n_gold,
                      filtering=args.filter, seed=args.seed)
    payload = {
        "trials": args.trials,
        "accepted": report.n_accepted,
        "discarded": report.n_discarded,
        "acceptance_rate": report.acceptance_rate,
        "accepted_error_rate": report.accepted_error_rate,
        "analytic_error_rate": report.analytic_error_rate,
        "gold_answers": report.gold_answers,
        "gold_error_estimate": report.gold_error_estimate,
        "rejected_workers": report.rejected_workers,
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "simulation.json").write_text(json.dumps(payload, indent=2) + "\n")
    write_manifest(out, "simulate", vars(args), seed=args.seed)
    print(json.dumps(payload, indent=2))
    return 0


def cmd_serve(args) -> int:
    store = CrowdStore(p_gold=args.p_gold, seed=args.seed, log_path=args.log)
    if args.pairs:
        store.create_tasks(read_pairs(args.pairs))
    if args.gold:
        for image_id, q in read_pairs(args.gold):
            if q.r not in (1, -1):
                raise ValueError(f"gold answers must be decisive, got {q.r}")
            store.add_gold_task(image_id, PairQuery(q.i, q.j), verified=q.r)
    app_kwargs = {}
    if args.ui:
        app_kwargs["static_dir"] = args.ui
    from .service import create_app
    app = create_app(store, images_dir=args.images, **app_kwargs)
    import uvicorn
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_export(args) -> int:
    store = CrowdStore.replay_file(args.log)
    count = store.export_dataset(args.out)
    write_manifest(Path(args.out).parent, "export", vars(args), seed=None)
    print(f"exported {count} accepted pairs to {args.out}")
    return 0


def cmd_pipeline(args) -> int:
    """synth -> sample -> train -> eval -> export, one run directory."""
    t0 = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    size = args.size
    splits = {"train": args.n_train, "val": args.n_val, "test": args.n_test}
    sampler = lambda seed: SamplerConfig(
        width=size, height=size, strategy="distance_constrained", seed=seed,
        pairs_per_image=args.pairs_per_image, ratio_threshold=args.ratio_thresh)
    for i, (split, n) in enumerate(splits.items()):
        make_dataset(out / split, n, sampler(args.seed + 17 * i),
                     pairs_per_image=args.pairs_per_image, seed=args.seed + 1000 * (i + 1))
    print(f"[pipeline] synth+sample done at {time.perf_counter() - t0:.0f}s", flush=True)

    samples = load_dataset(out / "train", out / "train" / "pairs.csv")
    model = Model(desk_config(), seed=args.seed)
    tc = TrainConfig(epochs=args.epochs, batch_size=4, lr=3e-3, seed=args.seed)
    history = train(model, samples, tc)
    if args.finetune_epochs:
        h2 = train(model, samples, TrainConfig(
            epochs=args.finetune_epochs, batch_size=4, lr=8e-4, seed=args.seed + 1))
        history.epoch_losses.extend(h2.epoch_losses)
    model.save(out / "model.ckpt")
    history.save(out / "loss_curve.csv")
    print(f"[pipeline] train done at {time.perf_counter() - t0:.0f}s "
          f"(final loss {history.epoch_losses[-1]:.4f})", flush=True)

    val_samples = load_dataset(out / "val")
    test_samples = load_dataset(out / "test")
    scores = predict_scores(model, val_samples + test_samples)
    test_records = read_pairs(out / "test" / "pairs.csv")
    gt_depths = {s.image_id: read_depth(out / "test" / f"dep_{s.image_id}.dmp")
                 for s in test_samples}
    result = evaluate(scores, test_records,
                      val_records=read_pairs(out / "val" / "pairs.csv"),
                      gt_depths=gt_depths)
    txt, _ = write_report(result.report, out / "report")
    print(f"[pipeline] eval done at {time.perf_counter() - t0:.0f}s", flush=True)
    print(txt.read_text().rstrip(), flush=True)

    # Annotate the test pairs through the crowd protocol with low-error
    # simulated workers and export the accepted dataset.
    store = CrowdStore(p_gold=0.0, filtering=False, seed=args.seed, log_events=True)
    decisive = [(image_id, q) for image_id, q in test_records if q.r != 0]
    task_ids = store.create_tasks(
        (f"{image_id}#{k}", PairQuery(q.i, q.j)) for k, (image_id, q) in enumerate(decisive))
    truth = {tid: q.r for tid, (_, q) in zip(task_ids, decisive)}
    rng = np.random.default_rng(args.seed)
    w1, w2 = store.register_worker("sim1"), store.register_worker("sim2")
    for wid in (w1, w2):
        while (task := store.next_task(wid)) is not None:
            rel = truth[task.task_id]
            if rng.random() < 0.02:
                rel = -rel
            store.submit_answer(wid, task.task_id, relation_to_choice(rel))
    store.save_log(out / "events.jsonl")
    n = store.export_dataset(out / "crowd_pairs.csv")
    print(f"[pipeline] exported {n} accepted pairs at {time.perf_counter() - t0:.0f}s", flush=True)
    write_manifest(out, "pipeline", vars(args), seed=args.seed)
    print(f"[pipeline] total {time.perf_counter() - t0:.0f}s; outputs in {out}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="depthrank",
                                description="Depth from ordinal annotations: "
                                            "training, evaluation, and annotation tooling.")
    p.add_argument("--version", action="version", version=f"depthrank {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sy = sub.add_parser("synth", help="render synthetic scenes with ground-truth depth")
    sy.add_argument("--out", required=True)
    sy.add_argument("--n-images", type=int, required=True)
    sy.add_argument("--width", type=int, default=48)
    sy.add_argument("--height", type=int, default=48)
    sy.add_argument("--strategy", default="distance_constrained",
                    choices=["unconstrained", "symmetric", "distance_constrained", "mixed"])
    sy.add_argument("--pairs-per-image", type=int, default=1)
    sy.add_argument("--ratio-thresh", type=float, default=1.05)
    sy.add_argument("--max-objects", type=int, default=3)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--scene-seed", type=int, default=1000)
    sy.set_defaults(func=cmd_synth)

    sa = sub.add_parser("sample", help="sample labeled pairs from depth rasters")
    sa.add_argument("--depths", required=True)
    sa.add_argument("--out", required=True)
    sa.add_argument("--strategy", default="distance_constrained",
                    choices=["unconstrained", "symmetric", "distance_constrained", "mixed"])
    sa.add_argument("--pairs-per-image", type=int, default=1)
    sa.add_argument("--ratio-thresh", type=float, default=1.05)
    sa.add_argument("--mix", type=float, default=0.5)
    sa.add_argument("--seed", type=int, default=0)
    sa.set_defaults(func=cmd_sample)

    tr = sub.add_parser("train", help="train the hourglass on a pair file")
    tr.add_argument("--data", required=True, help="directory with img_*.png")
    tr.add_argument("--pairs", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--config", help="model config file (key = value)")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--finetune-epochs", type=int, default=0,
                    help="extra epochs at --finetune-lr after the main phase")
    tr.add_argument("--finetune-lr", type=float, default=8e-4)
    tr.add_argument("--batch", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--loss", default="ranking", choices=["ranking", "logmse"])
    tr.add_argument("--seed", type=int, default=0)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate scores against labeled pairs")
    ev.add_argument("--pairs", required=True)
    ev.add_argument("--ckpt", help="model checkpoint (with --images)")
    ev.add_argument("--images", help="directory with img_*.png to score")
    ev.add_argument("--model-config")
    ev.add_argument("--pred", help="directory with precomputed score rasters (*.dmp)")
    ev.add_argument("--gt", help="directory with dep_*.dmp ground truth for metric errors")
    ev.add_argument("--val-pairs", help="pair file for tau calibration")
    ev.add_argument("--val-images", help="image directory for the validation pairs")
    ev.add_argument("--tau", type=float)
    ev.add_argument("--dump-pred", action="store_true")
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    si = sub.add_parser("simulate", help="run the annotation protocol on synthetic workers")
    si.add_argument("--error", type=float, required=True)
    si.add_argument("--hard", type=float, default=0.0)
    si.add_argument("--trials", type=int, default=100_000)
    si.add_argument("--workers", type=int, default=2)
    si.add_argument("--p-gold", type=float, default=0.0)
    si.add_argument("--n-gold", type=int, default=0)
    si.add_argument("--filter", action=argparse.BooleanOptionalAction, default=False)
    si.add_argument("--seed", type=int, default=0)
    si.add_argument("--out", required=True)
    si.set_defaults(func=cmd_simulate)

    se = sub.add_parser("serve", help="serve the annotation HTTP API")
    se.add_argument("--pairs", help="pair file to create tasks from")
    se.add_argument("--gold", help="gold bank pair file (r column = verified answer)")
    se.add_argument("--images", help="image directory for /img/<id>")
    se.add_argument("--ui", help="directory with the browser UI bundle")
    se.add_argument("--log", help="event log written on shutdown")
    se.add_argument("--p-gold", type=float, default=0.1)
    se.add_argument("--host", default="127.0.0.1")
    se.add_argument("--port", type=int, default=8008)
    se.add_argument("--seed", type=int, default=0)
    se.set_defaults(func=cmd_serve)

    ex = sub.add_parser("export", help="export accepted pairs from an event log")
    ex.add_argument("--log", required=True)
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export)

    pl = sub.add_parser("pipeline", help="synth -> sample -> train -> eval -> export")
    pl.add_argument("--out", required=True)
    pl.add_argument("--size", type=int, default=48)
    pl.add_argument("--n-train", type=int, default=200)
    pl.add_argument("--n-val", type=int, default=30)
    pl.add_argument("--n-test", type=int, default=50)
    pl.add_argument("--pairs-per-image", type=int, default=50)
    pl.add_argument("--ratio-thresh", type=float, default=1.05)
    pl.add_argument("--epochs", type=int, default=8)
    pl.add_argument("--finetune-epochs", type=int, default=4)
    pl.add_argument("--seed", type=int, default=0)
    pl.set_defaults(func=cmd_pipeline)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
