"""Command-line interface: ``facecascade <subcommand> [options]``.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines whose
keys are the long option names (dashes or underscores); explicit flags win.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cascade import fit, train_cascade
from .dataset import kfold_split, load_prior, load_samples, write_sweep
from .errors import FaceCascadeError
from .features import FeatureConfig
from .formats import (read_config, read_image, read_manifest, read_mesh, write_landmarks,
                      write_mapping, write_obj)
from .metrics import EvalRecord, npde_map, npde_summary, pose_bucket_report, yaw_table
from .model_io import load_model, save_model
from .recognition import (ScoreMatrix, distance_matrix, distances_to_similarity, fuse_scores,
                          rank1_identify, read_pairs_csv, read_score_csv, shape_distance,
                          verify_metrics, write_score_csv)
from .synth import SynthConfig, synth_faces, synth_pose_sweep

log = logging.getLogger("facecascade")


class CliError(Exception):
    """A user-facing failure reported as one line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


def _bbox(text: str) -> tuple:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bbox must be x,y,w,h numbers, got {text!r}") from None
    if len(vals) != 4:
        raise argparse.ArgumentTypeError(f"bbox needs 4 numbers, got {len(vals)}")
    return vals


def _yaws(text: str) -> tuple:
    """``a:b:step`` (inclusive) or a comma list."""
    try:
        if ":" in text:
            a, b, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError
            count = int(np.floor((b - a) / step + 1e-9)) + 1
            return tuple(a + step * i for i in range(count))
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad yaw list {text!r}") from None


def _ridge(text: str):
    if text.strip().lower() == "auto":
        return None
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"ridge must be a number or 'auto', got {text!r}") from None
    if val < 0:
        raise argparse.ArgumentTypeError("ridge must be non-negative")
    return val


def _fraction(text: str):
    if text.strip().lower() == "none":
        return None
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'none', got {text!r}") from None
    if val <= 0:
        raise argparse.ArgumentTypeError("patch fraction must be positive")
    return val


def _write_out(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ------------------------------------------------------------------ subcommands

def cmd_synth(a) -> int:
    prior, faces = synth_faces(a.subjects, n=a.vertices, l=a.landmarks,
                               expressions_per_subject=a.expressions, seed=a.seed,
                               include_neutral=not a.no_neutral)
    cfg = SynthConfig(yaws=a.yaws, width=a.width, height=a.height, landmark_noise=a.landmark_noise,
                      shape_noise=a.shape_noise, scale_fraction=a.scale_fraction, seed=a.seed)
    samples = synth_pose_sweep(faces, prior, cfg, workers=a.workers)
    folds = None
    if a.folds:
        split = kfold_split(samples, k=a.folds, seed=a.seed)
        folds = {s.subject: f for f, group in enumerate(split) for s in group}
    path = write_sweep(samples, prior, a.out, folds)
    print(f"wrote {len(samples)} samples to {path}")
    return 0


def _select(rows, fold, exclude):
    if fold is None:
        return rows
    return [r for r in rows if (r.fold != fold) == exclude]


def _prior_for(a, manifest):
    return load_prior(a.prior if a.prior else Path(manifest).parent / "prior")


def cmd_train(a) -> int:
    prior = _prior_for(a, a.manifest)
    rows = _select(read_manifest(a.manifest), a.test_fold, exclude=True)
    if not rows:
        raise CliError("no training samples selected")
    samples = load_samples(rows, prior, workers=a.workers)
    cfg = FeatureConfig(patch_size=a.patch_size, cells=a.cells, orientation_bins=a.bins,
                        patch_fraction=a.patch_fraction)
    model = train_cascade(samples, prior, K=a.stages, ridge=a.ridge, ridge_factor=a.ridge_factor,
                          feature_config=cfg, workers=a.workers)
    save_model(model, a.out)
    h = model.history
    print(f"trained {model.K} stages on {len(samples)} samples: NME {h['nme'][0]:.6g} -> "
          f"{h['nme'][-1]:.6g}, MAE {h['mae'][0]:.6g} -> {h['mae'][-1]:.6g} mm; model {a.out}")
    return 0


def cmd_fit(a) -> int:
    model = load_model(a.model)
    image = read_image(a.image)
    res = fit(image, a.bbox, model)
    if res.mapping is None:
        raise CliError("no mapping could be fitted for this image")
    prefix = a.out_prefix
    write_obj(res.pen_shape, f"{prefix}_pen.obj")
    write_obj(res.expressive_shape, f"{prefix}_expr.obj")
    write_landmarks(res.landmarks, f"{prefix}_landmarks.txt")
    write_mapping(res.mapping, f"{prefix}_mapping.txt")
    if res.degraded:
        log.warning("mapping fit failed at some stage; previous mapping reused")
    print(f"wrote {prefix}_pen.obj {prefix}_expr.obj {prefix}_landmarks.txt {prefix}_mapping.txt")
    return 0


def _evaluate(a):
    model = load_model(a.model)
    rows = _select(read_manifest(a.manifest), a.test_fold, exclude=False)
    if not rows:
        raise CliError("no evaluation samples selected")
    samples = load_samples(rows, model.prior, workers=a.workers)
    records = []
    for s in samples:
        res = fit(s.image, s.bbox, model)
        if a.target == "pen":
            gt, est = s.target.identity, res.pen_shape
        else:
            gt, est = s.target.expressive, res.expressive_shape
        records.append(EvalRecord(s.sample_id, s.bbox, s.yaw, gt_shape=est.with_vertices(gt.reshape(-1, 3)),
                                  est_shape=est, gt_landmarks=s.landmarks, est_landmarks=res.landmarks))
    return records


def _emit(report, a, trailer: str = "") -> None:
    _write_out(a.out, report.to_text(method=a.method) + trailer)
    if a.csv:
        Path(a.csv).write_text(report.to_csv())


def cmd_eval_align(a) -> int:
    records = _evaluate(a)
    rep = pose_bucket_report(records, metric="nme")
    # NME is reported in percent of the box side
    scaled = type(rep)(rep.metric, rep.labels,
                       tuple(None if v is None else 100.0 * v for v in rep.values),
                       rep.counts, 100.0 * rep.mean, 100.0 * rep.std)
    _emit(scaled, a)
    return 0


def cmd_eval_recon(a) -> int:
    records = _evaluate(a)
    rep = yaw_table(records, metric="mae", align=a.align, norm=a.norm)
    maps = np.concatenate([npde_map(r.gt_shape, r.est_shape) for r in records])
    mean, std = npde_summary(maps)
    _emit(rep, a, f"NPDE mean {mean:.2f}% std {std:.2f}%\n")
    return 0


def _mesh_list(spec) -> list:
    """A directory of .obj/.ply meshes, or a text file of ``label path`` lines."""
    p = Path(spec)
    if p.is_dir():
        files = sorted(q for q in p.iterdir() if q.suffix.lower() in (".obj", ".ply"))
        return [(q.stem, q) for q in files]
    out = []
    for line in p.read_text().splitlines():
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        if len(tok) == 1:
            out.append((Path(tok[0]).stem, p.parent / tok[0]))
        else:
            out.append((tok[0], p.parent / tok[1]))
    return out


def cmd_match_3d(a) -> int:
    probes = _mesh_list(a.probes)
    gallery = _mesh_list(a.gallery)
    if not probes or not gallery:
        raise CliError("probe and gallery lists must be non-empty")
    pm = [read_mesh(p) for _, p in probes]
    gm = [read_mesh(p, expected_n=pm[0].n if a.mode == "corresponded" else None) for _, p in gallery]
    d = distance_matrix(pm, gm, mode=a.mode, workers=a.workers)
    sm = ScoreMatrix(d, [x for x, _ in probes], [x for x, _ in gallery])
    if not a.raw_distances:
        sm = distances_to_similarity(sm, per_row=a.per_row)
    write_score_csv(sm, a.out)
    print(f"wrote {len(probes)} x {len(gallery)} scores to {a.out}")
    return 0


def cmd_fuse(a) -> int:
    s2 = read_score_csv(a.scores_2d)
    s3 = read_score_csv(a.scores_3d)
    fused = fuse_scores(s2, s3, a.weight)
    write_score_csv(fused, sys.stdout if a.out in (None, "-") else a.out)
    return 0


def _truth(path, scores: ScoreMatrix):
    if path is None:
        return None
    table = {}
    for line in Path(path).read_text().splitlines():
        tok = [t.strip() for t in line.replace(",", " ").split()]
        if len(tok) >= 2 and not tok[0].startswith("#"):
            table[tok[0]] = tok[1]
    missing = [p for p in scores.probe_labels if p not in table]
    if missing:
        raise CliError(f"truth file lacks probe {missing[0]!r}")
    return [table[p] for p in scores.probe_labels]


def cmd_identify(a) -> int:
    s = read_score_csv(a.scores)
    pred, acc = rank1_identify(s, _truth(a.truth, s))
    if a.predictions:
        Path(a.predictions).write_text("".join(f"{p},{g}\n" for p, g in zip(s.probe_labels, pred)))
    print(f"rank-1 {acc:.2f}% over {len(pred)} probes")
    return 0


def cmd_verify(a) -> int:
    pairs = read_pairs_csv(a.pairs)
    if not pairs:
        raise CliError("pairs file is empty")
    if a.scores:
        s = read_score_csv(a.scores)
        rows = {lab: i for i, lab in enumerate(s.probe_labels)}
        cols = {lab: j for j, lab in enumerate(s.gallery_labels)}
        vals = []
        for x, y, _ in pairs:
            if x in rows and y in cols:
                vals.append(s.scores[rows[x], cols[y]])
            elif y in rows and x in cols:
                vals.append(s.scores[rows[y], cols[x]])
            else:
                raise CliError(f"pair ({x}, {y}) not in score matrix")
        scores = np.array(vals)
    else:
        base = Path(a.pairs).parent
        cache = {}

        def mesh(p):
            if p not in cache:
                cache[p] = read_mesh(base / p)
            return cache[p]

        d = np.array([shape_distance(mesh(x), mesh(y), a.mode) for x, y, _ in pairs])
        scores = distances_to_similarity(d)
    same = np.array([f for _, _, f in pairs], dtype=bool)
    if same.all() or not same.any():
        raise CliError("need both genuine and imposter pairs")
    rep = verify_metrics(scores[same], scores[~same])
    print(f"accuracy {rep.accuracy:.2f}% EER {rep.eer:.2f}% AUC {rep.auc:.2f}% "
          f"threshold {rep.threshold:.6g}")
    return 0


# ------------------------------------------------------------------ parser

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value file; explicit flags override it")
    p.add_argument("--workers", type=int, default=1, help="threads for per-sample work")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="facecascade", description="Joint 2D landmark and 3D shape fitting.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="render a synthetic pose-sweep dataset")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--expressions", type=int, default=1, help="expressive meshes per subject")
    p.add_argument("--no-neutral", action="store_true", help="omit the neutral mesh of each subject")
    p.add_argument("--vertices", type=int, default=2000)
    p.add_argument("--landmarks", type=int, default=68)
    p.add_argument("--yaws", type=_yaws, default=SynthConfig.yaws, help="a:b:step or comma list; write --yaws=-90:90:10 when it starts negative")
    p.add_argument("--width", type=int, default=SynthConfig.width)
    p.add_argument("--height", type=int, default=SynthConfig.height)
    p.add_argument("--landmark-noise", type=float, default=0.0)
    p.add_argument("--shape-noise", type=float, default=0.0)
    p.add_argument("--scale-fraction", type=float, default=SynthConfig.scale_fraction)
    p.add_argument("--folds", type=int, default=0, help="assign subject-disjoint folds")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a cascade from a manifest")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--prior", help="prior directory (default: <manifest dir>/prior)")
    p.add_argument("--out", required=True)
    p.add_argument("--stages", type=int, default=5)
    p.add_argument("--ridge", type=_ridge, default=None, help="number or 'auto'")
    p.add_argument("--ridge-factor", type=float, default=1e-3)
    p.add_argument("--patch-size", type=int, default=FeatureConfig.patch_size)
    p.add_argument("--patch-fraction", type=_fraction, default=FeatureConfig.patch_fraction,
                   help="patch side as a fraction of sqrt(box area); 'none' uses --patch-size")
    p.add_argument("--cells", type=int, default=FeatureConfig.cells)
    p.add_argument("--bins", type=int, default=FeatureConfig.orientation_bins)
    p.add_argument("--test-fold", type=int, default=None, help="hold out this fold")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit", help="fit landmarks and 3D shape to one image")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--bbox", type=_bbox, required=True, help="x,y,w,h")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_fit)

    for name, func, helptext in (("eval-align", cmd_eval_align, "landmark NME by pose bucket"),
                                 ("eval-recon", cmd_eval_recon, "3D MAE by yaw, plus NPDE")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--model", required=True)
        p.add_argument("--manifest", required=True)
        p.add_argument("--test-fold", type=int, default=None, help="evaluate only this fold")
        p.add_argument("--target", choices=("expressive", "pen"), default="expressive")
        p.add_argument("--align", choices=("rigid", "similarity", "none"), default="rigid")
        p.add_argument("--norm", choices=("per-vertex", "l2"), default="per-vertex")
        p.add_argument("--method", default="Proposed", help="row label in the report")
        p.add_argument("--out", default="-")
        p.add_argument("--csv", help="also write the report as CSV")
        p.set_defaults(func=func)

    p = sub.add_parser("match-3d", help="probe x gallery 3D shape scores")
    _common(p)
    p.add_argument("--probes", required=True, help="mesh directory or 'label path' list")
    p.add_argument("--gallery", required=True, help="mesh directory or 'label path' list")
    p.add_argument("--mode", choices=("corresponded", "icp"), default="corresponded")
    p.add_argument("--raw-distances", action="store_true", help="write distances, not similarities")
    p.add_argument("--per-row", action="store_true", help="normalise each probe row separately")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match_3d)

    p = sub.add_parser("fuse", help="weighted-sum fusion of two score matrices")
    _common(p)
    p.add_argument("--scores-2d", required=True)
    p.add_argument("--scores-3d", required=True)
    p.add_argument("--weight", type=float, required=True, help="weight of the 2D scores")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("identify", help="rank-1 identification from a score matrix")
    _common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--truth", help="'probe,label' lines (default: probe label is the identity)")
    p.add_argument("--predictions", help="write 'probe,predicted' lines here")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("verify", help="accuracy, EER and AUC over labelled pairs")
    _common(p)
    p.add_argument("--pairs", required=True, help="CSV of path_a,path_b,same")
    p.add_argument("--scores", help="look pair scores up in this matrix instead of matching meshes")
    p.add_argument("--mode", choices=("corresponded", "icp"), default="corresponded")
    p.set_defaults(func=cmd_verify)
    return parser


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser, argv):
    """Parse ``argv`` with defaults taken from ``--config``; flags still win."""
    path = _config_path(argv)
    sub_action = parser._subparsers._group_actions[0]
    command = next((t for t in argv if t in sub_action.choices), None)
    if path is None or command is None:
        return parser.parse_args(argv)
    conf = read_config(path)
    sub = sub_action.choices[command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in conf.items():
        if key in ("config", "help") or key not in actions:
            raise CliError(f"{path}: unknown key {key!r} for {command}")
        act = actions[key]
        if isinstance(act, argparse._StoreTrueAction):
            val = raw.lower() in ("1", "true", "yes", "on")
        elif act.type is not None:
            try:
                val = act.type(raw)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise CliError(f"{path}: bad value for {key}: {exc}") from None
        else:
            val = raw
        if act.choices is not None and val not in act.choices:
            raise CliError(f"{path}: {key} must be one of {', '.join(map(str, act.choices))}")
        defaults[key] = val
        act.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, sys.argv[1:] if argv is None else argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s", stream=sys.stderr)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FaceCascadeError, OSError, ValueError, KeyError) as exc:
        print(f"facecascade: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
