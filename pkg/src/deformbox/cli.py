"""Command-line entry point: ``deformbox <command> [options]``.

Every command prints one JSON object on stdout, writes JSON-lines logs to
stderr (or ``--log``), renders figures into ``--plot-dir`` when given, and
exits nonzero on any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import plotting
from .config import RunConfig
from .deform import DeformFeatures
from .mesh import load_obj, merge_meshes, sample_surface, save_obj
from .metrics import compute_metrics, distance_matrix, normalize_points
from .pipeline import (
    MissingWeightsError,
    decode_shape,
    encode_shape,
    features_by_type,
    fit_spvae,
    load_dataset,
    load_shape_dir,
    refine_parts,
    shape_vectors,
    template_for,
    train_all_partvaes,
)
from .refine import RefineProblem, build_problem, check_solution, evaluate_layout, solve
from .structure import Category, assemble_shape_vector, load_record, parse_shape_vector, save_record
from .synth import table_category, write_corpus
from .vae import VaeParams, init_partvae, init_spvae, interpolate, reconstruction_error, sample_shape

log = logging.getLogger("deformbox")

SPVAE_FILE = "spvae.sdmw"


class CliError(RuntimeError):
    pass


class JsonLinesFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        out = {"level": record.levelname.lower(), "event": record.getMessage()}
        out.update(getattr(record, "fields", {}))
        return json.dumps(out, sort_keys=True)


def _setup_logging(path: Optional[str]) -> logging.Handler:
    handler: logging.Handler = logging.FileHandler(path, mode="w", encoding="utf-8") if path else logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLinesFormatter())
    log.handlers[:] = [handler]
    log.setLevel(logging.INFO)
    log.propagate = False
    return handler


def _event(name: str, **fields) -> None:
    log.info(name, extra={"fields": fields})


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def partvae_path(weights_dir, ptype: str) -> Path:
    return Path(weights_dir) / f"partvae_{ptype}.sdmw"


# --------------------------------------------------------------------------
# config resolution


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.with_seed(args.seed)


def _category(args, cfg: RunConfig) -> Category:
    if getattr(args, "category", None):
        return Category.load(args.category)
    if cfg.category is not None:
        return cfg.category
    raise CliError("no category: pass --category or set it in --config")


def _weights_dir(args, cfg: RunConfig) -> Path:
    d = getattr(args, "weights_dir", None) or cfg.weights_dir
    if d is None:
        raise CliError("no weights directory: pass --weights-dir or set weights_dir in --config")
    return Path(d)


def _dataset(args, cfg: RunConfig):
    root = getattr(args, "data", None) or cfg.dataset_dir
    if root is None:
        raise CliError("no dataset: pass --data or set dataset_dir in --config")
    return load_dataset(root)


def _load_partvaes(weights_dir: Path, category: Category, needed=None) -> dict:
    types = sorted(set(category.part_types[category.labels[i]] for i in needed) if needed is not None else set(category.part_types.values()))
    out = {}
    for t in types:
        path = partvae_path(weights_dir, t)
        if not path.exists():
            raise MissingWeightsError(f"missing PartVAE weights {path}")
        out[t] = VaeParams.load(path)
    return out


def _load_spvae(weights_dir: Path) -> VaeParams:
    path = weights_dir / SPVAE_FILE
    if not path.exists():
        raise MissingWeightsError(f"missing SP-VAE weights {path}")
    return VaeParams.load(path)


def _encode_all(cfg: RunConfig, category: Category, shapes, partvaes=None):
    template = template_for(cfg.template_m)
    out = []
    for sid, parts in shapes:
        out.append(encode_shape(category, parts, template, partvaes, cfg.registration, cfg.contact_tol, cfg.tau))
        _event("encoded", shape=sid, parts=len(parts))
    return out


def _decode_to_dir(record, category, cfg, partvaes, out_dir: Path, refine: bool, plot_dir, stem: str, features=None) -> dict:
    template = template_for(cfg.template_m)
    meshes, _ = decode_shape(record, category, template, partvaes, features)
    prob = sol = None
    if refine and meshes:
        by_id = {category.label_id(lab): m for lab, m in meshes.items()}
        prob, sol, placed = refine_parts(record, by_id, category, cfg.alpha, cfg.eps)
        meshes = {category.labels[i]: m for i, m in placed.items()}
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for lab, mesh in sorted(meshes.items()):
        path = out_dir / f"{lab}.obj"
        save_obj(mesh, path)
        files[lab] = str(path)
    result = {"parts": files, "refined": bool(refine), "objective": None, "assignment": None, "report": None, "feasible": None}
    if sol is not None:
        result.update(objective=sol.objective, assignment=[list(a) for a in sol.assignment], report=sol.report, feasible=bool(sol.feasible))
        if plot_dir:
            plotting.plot_layout((prob.p, prob.q), (sol.p, sol.q), Path(plot_dir) / f"{stem}_layout.png", [category.labels[i] for i in record.present])
    elif plot_dir and meshes:
        plotting.plot_parts(meshes, Path(plot_dir) / f"{stem}_parts.png")
    return result


# --------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg: RunConfig) -> dict:
    root = write_corpus(args.out, count=args.count, seed=cfg.seed, m=args.m or cfg.template_m)
    _event("synth_done", root=str(root), count=args.count)
    return {"command": "synth", "root": str(root), "category": table_category().name, "shapes": args.count}


def cmd_encode(args, cfg: RunConfig) -> dict:
    category = _category(args, cfg)
    parts = load_shape_dir(args.shape_dir, category)
    partvaes = None
    if args.weights_dir or cfg.weights_dir:
        partvaes = _load_partvaes(_weights_dir(args, cfg), category, [category.label_id(lab) for lab in parts])
    template = template_for(cfg.template_m)
    enc = encode_shape(category, parts, template, partvaes, cfg.registration, cfg.contact_tol, cfg.tau)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_record(enc.record, out, category.labels)
    box_dir = Path(args.boxes_dir) if args.boxes_dir else out.with_suffix("").parent / (out.stem + "_boxes")
    box_dir.mkdir(parents=True, exist_ok=True)
    boxes = {}
    for i, mesh in sorted(enc.boxes.items()):
        lab = category.labels[i]
        path = box_dir / f"{lab}.obj"
        save_obj(mesh, path)
        boxes[lab] = str(path)
    feats_path = box_dir / "features.npz"
    np.savez(feats_path, **{category.labels[i]: f.data for i, f in sorted(enc.features.items())})
    _event("encode_done", record=str(out), parts=len(parts))
    return {
        "command": "encode",
        "record": str(out),
        "present": [category.labels[i] for i in enc.record.present],
        "boxes": boxes,
        "features": str(feats_path),
        "registration": enc.registration,
        "support_edges": sorted([[("ground" if e.supporter == category.n else category.labels[e.supporter]), category.labels[e.supported], e.kind] for e in enc.graph.edges]),
        "used_partvae": partvaes is not None,
    }


def cmd_decode(args, cfg: RunConfig) -> dict:
    category = _category(args, cfg)
    record = load_record(args.record, category)
    features, partvaes = None, None
    if args.features:
        with np.load(args.features) as z:
            features = {category.label_id(k): DeformFeatures(z[k]) for k in z.files}
        missing = [category.labels[i] for i in record.present if i not in features]
        if missing:
            raise MissingWeightsError(f"features file lacks parts {missing}")
    else:
        partvaes = _load_partvaes(_weights_dir(args, cfg), category, record.present)
    result = _decode_to_dir(record, category, cfg, partvaes, Path(args.out), args.refine, args.plot_dir, Path(args.record).stem, features)
    _event("decode_done", out=args.out, parts=len(result["parts"]), refined=bool(args.refine))
    return {"command": "decode", **result}


def _train_logger(model: str, every: int):
    def on_step(*a):
        ptype, rec = (a[0], a[1]) if len(a) == 2 else (None, a[0])
        if rec["iteration"] % every == 0 or rec["iteration"] == 1:
            fields = {"model": model, **rec}
            if ptype is not None:
                fields["part_type"] = ptype
            _event("train_step", **fields)

    return on_step


def _write_history(path: Path, history) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in history:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def cmd_train_partvae(args, cfg: RunConfig) -> dict:
    category, shapes = _dataset(args, cfg)
    vcfg = cfg.partvae
    over = {k: v for k, v in (("iterations", args.iters), ("batch_size", args.batch_size)) if v is not None}
    if over:
        vcfg = type(vcfg)(**{**vcfg.to_json(), **over})
    enc = _encode_all(cfg, category, shapes)
    models, histories = train_all_partvaes(category, enc, vcfg, args.part_type or None, _train_logger("partvae", args.log_every))
    wdir = Path(args.weights_dir or cfg.weights_dir or "weights")
    wdir.mkdir(parents=True, exist_ok=True)
    data = features_by_type(category, enc)
    out = {}
    for ptype, params in models.items():
        path = partvae_path(wdir, ptype)
        params.save(path)
        _write_history(path.with_suffix(".history.jsonl"), histories[ptype])
        init = init_partvae(int(params.meta["template_m"]), seed=vcfg.seed, latent_dim=int(params.meta["latent_dim"]))
        e0, e1 = reconstruction_error(init, data[ptype]), reconstruction_error(params, data[ptype])
        out[ptype] = {"path": str(path), "parts": int(len(data[ptype])), "iterations": vcfg.iterations, "initial_error": e0, "final_error": e1, "reduction": 1.0 - e1 / e0 if e0 > 0 else 0.0}
        if args.plot_dir:
            plotting.plot_loss_curves(histories[ptype], Path(args.plot_dir) / f"partvae_{ptype}_loss.png", f"PartVAE ({ptype})")
    return {"command": "train-partvae", "weights_dir": str(wdir), "models": out}


def cmd_train_spvae(args, cfg: RunConfig) -> dict:
    category, shapes = _dataset(args, cfg)
    wdir = _weights_dir(args, cfg)
    vcfg = cfg.spvae
    over = {k: v for k, v in (("iterations", args.iters), ("batch_size", args.batch_size)) if v is not None}
    if over:
        vcfg = type(vcfg)(**{**vcfg.to_json(), **over})
    partvaes = _load_partvaes(wdir, category)
    enc = _encode_all(cfg, category, shapes)
    params, history = fit_spvae(category, enc, partvaes, vcfg, _train_logger("spvae", args.log_every))
    x = shape_vectors(category, enc, partvaes)
    init = init_spvae(x.shape[1], seed=vcfg.seed, latent_dim=int(params.meta["latent_dim"]))
    e0, e1 = reconstruction_error(init, x), reconstruction_error(params, x)
    path = wdir / SPVAE_FILE
    params.save(path)
    _write_history(path.with_suffix(".history.jsonl"), history)
    if args.plot_dir:
        plotting.plot_loss_curves(history, Path(args.plot_dir) / "spvae_loss.png", "SP-VAE")
    return {"command": "train-spvae", "path": str(path), "shapes": int(len(x)), "iterations": vcfg.iterations, "initial_error": e0, "final_error": e1, "reduction": 1.0 - e1 / e0 if e0 > 0 else 0.0}


def _emit_records(vectors, category, cfg, args, stem: str, partvaes) -> list:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    items = []
    for k, v in enumerate(vectors):
        record = parse_shape_vector(v, category.n, category)
        path = out_dir / f"{stem}_{k:03d}.json"
        save_record(record, path, category.labels)
        item = {"record": str(path), "present": [category.labels[i] for i in record.present]}
        if args.decode:
            item["decoded"] = _decode_to_dir(record, category, cfg, partvaes, out_dir / f"{stem}_{k:03d}", args.refine, args.plot_dir, f"{stem}_{k:03d}")
        items.append(item)
    return items


def cmd_sample(args, cfg: RunConfig) -> dict:
    category = _category(args, cfg)
    wdir = _weights_dir(args, cfg)
    sp = _load_spvae(wdir)
    if args.count < 1:
        raise CliError("--count must be >= 1")
    vecs = np.atleast_2d(sample_shape(sp, np.random.default_rng(cfg.seed), args.count))
    partvaes = _load_partvaes(wdir, category) if args.decode else None
    items = _emit_records(vecs, category, cfg, args, "sample", partvaes)
    return {"command": "sample", "count": len(items), "records": items}


def cmd_interpolate(args, cfg: RunConfig) -> dict:
    category = _category(args, cfg)
    wdir = _weights_dir(args, cfg)
    sp = _load_spvae(wdir)
    a = assemble_shape_vector(load_record(args.record_a, category))
    b = assemble_shape_vector(load_record(args.record_b, category))
    vecs = interpolate(sp, a, b, args.steps)
    partvaes = _load_partvaes(wdir, category) if args.decode else None
    items = _emit_records(vecs, category, cfg, args, "interp", partvaes)
    return {"command": "interpolate", "steps": len(items), "records": items}


def cmd_refine(args, cfg: RunConfig) -> dict:
    if args.problem:
        prob = RefineProblem.load(args.problem)
    else:
        if not (args.record and args.parts):
            raise CliError("pass a problem JSON, or --record together with --parts")
        category = _category(args, cfg)
        record = load_record(args.record, category)
        parts_dir = Path(args.parts)
        meshes = {}
        for i in record.present:
            path = parts_dir / f"{category.labels[i]}.obj"
            if not path.exists():
                raise CliError(f"missing decoded part {path}")
            meshes[i] = load_obj(path, category.labels[i])
        prob = build_problem(record, meshes, category.lookup, category, cfg.alpha, cfg.eps)
    before = evaluate_layout(prob, prob.p, prob.q)
    sol = solve(prob)
    report = check_solution(prob, sol)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    sol.save(out)
    if args.plot_dir:
        plotting.plot_layout((prob.p, prob.q), (sol.p, sol.q), Path(args.plot_dir) / f"{out.stem}_layout.png", prob.names)
    _event("refine_done", objective=sol.objective, nodes=sol.nodes)
    return {
        "command": "refine",
        "solution": str(out),
        "objective": sol.objective,
        "assignment": [list(a) for a in sol.assignment],
        "feasible": bool(sol.feasible),
        "residuals_before": before,
        "residuals_after": report,
        "nodes": sol.nodes,
    }


def _point_sets(root: Path, points: int, seed: int) -> tuple[list[str], list[np.ndarray]]:
    """Shapes under ``root``: ``.npy`` point arrays or sub-directories of part OBJs."""
    names, sets = [], []
    for entry in sorted(root.iterdir()):
        if entry.suffix == ".npy":
            pts = np.load(entry).reshape(-1, 3)
        elif entry.is_dir() and any(entry.glob("*.obj")):
            mesh = merge_meshes([load_obj(f) for f in sorted(entry.glob("*.obj"))])
            pts = sample_surface(mesh, points, seed)
        else:
            continue
        names.append(entry.name)
        sets.append(pts)
    if not sets:
        raise CliError(f"no shapes (.npy point sets or OBJ directories) under {root}")
    return names, sets


def cmd_eval(args, cfg: RunConfig) -> dict:
    gen_names, gen = _point_sets(Path(args.generated), args.points, cfg.seed)
    ref_names, ref = _point_sets(Path(args.reference), args.points, cfg.seed)
    metrics = compute_metrics(gen, ref, resolution=args.resolution, emd=not args.no_emd, seed=cfg.seed)
    if args.plot_dir:
        d = distance_matrix([normalize_points(r) for r in ref], [normalize_points(g) for g in gen])
        plotting.plot_distance_matrix(d, Path(args.plot_dir) / "chamfer_matrix.png", "Chamfer: reference x generated")
    result = {"command": "eval", "generated": len(gen), "reference": len(ref), "resolution": args.resolution, "metrics": metrics.to_json()}
    if args.out:
        _write_json(Path(args.out), result)
    return result


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed (default 0)")
    common.add_argument("--config", help="RunConfig JSON file")
    common.add_argument("--plot-dir", help="render figures into this directory")
    common.add_argument("--log", help="write JSON-lines logs here instead of stderr")

    p = argparse.ArgumentParser(prog="deformbox", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write the synthetic table corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=240)
    s.add_argument("--m", type=int, default=None, help="template resolution of the generated parts")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("encode", parents=[common], help="shape directory -> record JSON and fitted boxes")
    s.add_argument("shape_dir")
    s.add_argument("--category")
    s.add_argument("--out", required=True)
    s.add_argument("--weights-dir")
    s.add_argument("--boxes-dir")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", parents=[common], help="record JSON -> per-part OBJs")
    s.add_argument("record")
    s.add_argument("--category")
    s.add_argument("--out", required=True)
    s.add_argument("--weights-dir")
    s.add_argument("--features", help="features.npz from encode, used instead of PartVAE decoding")
    s.add_argument("--refine", action="store_true")
    s.set_defaults(func=cmd_decode)

    for name, func in (("train-partvae", cmd_train_partvae), ("train-spvae", cmd_train_spvae)):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--data", help="category directory holding category.json and shape folders")
        s.add_argument("--weights-dir")
        s.add_argument("--iters", type=int)
        s.add_argument("--batch-size", type=int)
        s.add_argument("--log-every", type=int, default=1)
        if name == "train-partvae":
            s.add_argument("--part-type", action="append", help="train only these part types (repeatable)")
        s.set_defaults(func=func)

    for name, func in (("sample", cmd_sample), ("interpolate", cmd_interpolate)):
        s = sub.add_parser(name, parents=[common])
        if name == "sample":
            s.add_argument("--count", type=int, default=1)
        else:
            s.add_argument("record_a")
            s.add_argument("record_b")
            s.add_argument("--steps", type=int, default=6)
        s.add_argument("--category")
        s.add_argument("--weights-dir")
        s.add_argument("--out", required=True)
        s.add_argument("--decode", action="store_true", help="also decode every record to OBJs")
        s.add_argument("--refine", action="store_true", help="refine decoded layouts")
        s.set_defaults(func=func)

    s = sub.add_parser("refine", parents=[common], help="solve a refinement problem")
    s.add_argument("problem", nargs="?")
    s.add_argument("--record")
    s.add_argument("--parts", help="directory of decoded part OBJs for --record")
    s.add_argument("--category")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("eval", parents=[common], help="JSD / MMD / COV between two shape sets")
    s.add_argument("--generated", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--points", type=int, default=1024)
    s.add_argument("--resolution", type=int, default=28)
    s.add_argument("--no-emd", action="store_true", help="skip the transport-distance metrics")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = _setup_logging(args.log)
    try:
        cfg = _config(args)
        _event("start", command=args.command, seed=cfg.seed)
        result = args.func(args, cfg)
        if args.plot_dir:
            result["plot_dir"] = str(args.plot_dir)
        sys.stdout.write(json.dumps(result, indent=2, sort_keys=True) + "\n")
        _event("done", command=args.command)
        return 0
    except Exception as exc:  # every failure becomes a nonzero exit with context
        _event("error", command=args.command, kind=type(exc).__name__, message=str(exc))
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    finally:
        handler.flush()
        if isinstance(handler, logging.FileHandler):
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
