"""Command-line entry point.

Exit codes: 0 success, 2 usage / invalid input, 3 file format error,
4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .config import RunConfig
from .dataset import Dataset, SubjectData
from .descriptors import SubjectVolumes, build_descriptors
from .ensemble import ALL_CODES, SUPERVISORS, TRICLASSES, class_distribution, is_borderline
from .errors import DivergenceError, FormatError, TractLabelError
from .evaluation import LEAVE_ONE_OUT, SINGLE_INPUT, run_ablation
from .nn import StarConfig, StarNetwork
from .sampler import Split, split_subjects
from .supervisors import SupervisorInputs, supervise
from .train import evaluate, train
from .volume import fit_sh_per_shell

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_DIVERGENCE = 0, 2, 3, 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _need_file(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"missing file: {p}")
    return p


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(_need_file(args.config)) if args.config else RunConfig()
    if args.seed is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: RunConfig, outputs, extra=None):
    record = {
        "command": command,
        "version": __version__,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "outputs": sorted(str(o) for o in outputs),
    }
    if extra:
        record.update(extra)
    io.write_json(out / "manifest.json", record)


def _subject_dirs(root) -> list:
    root = _need_file(root)
    if (root / io.SUBJECT_FILES["tractogram"]).exists():
        return [root]
    dirs = sorted(p for p in root.iterdir() if (p / io.SUBJECT_FILES["tractogram"]).exists())
    if not dirs:
        raise UsageError(f"no subject directories under {root}")
    return dirs


def _subject_volumes(d: Path, cfg: RunConfig) -> SubjectVolumes:
    t1w = io.read_volume(_need_file(d / io.SUBJECT_FILES["t1w"]))
    parc = io.read_volume(_need_file(d / io.SUBJECT_FILES["parcellation"]))
    sh_path = d / io.SUBJECT_FILES["sh"]
    if sh_path.exists():
        sh = io.read_volume(sh_path)
    else:
        dwi = io.read_volume(_need_file(d / "dwi.vol"))
        scheme = io.scheme_from_json(io.read_json(_need_file(d / "scheme.json")))
        sh = fit_sh_per_shell(dwi, scheme, cfg.lmax, cfg.shells)
    if sh.channels != cfg.sh_channels():
        raise UsageError(f"{d}: SH volume has {sh.channels} channels, config expects {cfg.sh_channels()}")
    return SubjectVolumes(t1w, sh, parc)


def _region_table(cfg: RunConfig, dirs) -> tuple:
    """The configured table, or every nonzero label found in the parcellations."""
    if cfg.region_table:
        return cfg.region_table
    labels = set()
    for d in dirs:
        labels |= set(np.unique(io.read_volume(d / io.SUBJECT_FILES["parcellation"]).data).tolist())
    labels.discard(0)
    return tuple(sorted(int(x) for x in labels))


def _load_dataset(root, cfg: RunConfig, labels_name=None):
    dirs = _subject_dirs(root)
    table = _region_table(cfg, dirs)
    if table != cfg.region_table:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "region_table": list(table)})
    subjects = []
    for d in dirs:
        streamlines = io.read_tractogram(d / io.SUBJECT_FILES["tractogram"])
        labels = io.import_labels(
            _need_file(d / (labels_name or io.SUBJECT_FILES["labels"])), len(streamlines)
        )
        subjects.append(
            SubjectData(d.name, [s.astype(np.float64) for s in streamlines], labels, _subject_volumes(d, cfg))
        )
    return Dataset(subjects, cfg.descriptor_config()), cfg


def _read_split(path) -> Split:
    d = io.read_json(_need_file(path))
    try:
        return Split(tuple(d["train"]), tuple(d["validation"]), tuple(d["test"]))
    except KeyError as e:
        raise FormatError(f"split file lacks {e}") from None


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    from .synth import synth_fixture

    cfg = _load_config(args)
    out = _out_dir(args)
    fx = synth_fixture(cfg.seed, args.subjects, args.streamlines)
    cfg = RunConfig.from_dict({**cfg.to_dict(), "region_table": list(fx.region_table)})
    outputs = []
    for s in fx.subjects:
        d = out / s.name
        d.mkdir(exist_ok=True)
        io.write_tractogram(d / io.SUBJECT_FILES["tractogram"], s.streamlines)
        io.write_volume(d / io.SUBJECT_FILES["t1w"], s.t1w)
        io.write_volume(d / io.SUBJECT_FILES["sh"], s.sh)
        io.write_volume(d / io.SUBJECT_FILES["parcellation"], s.parcellation)
        io.write_volume(d / io.SUBJECT_FILES["deep_wm"], s.deep_wm)
        io.write_volume(d / io.SUBJECT_FILES["ventricles"], s.ventricles)
        io.write_json(d / io.SUBJECT_FILES["atlas"], io.atlas_to_json(s.atlas))
        io.write_json(d / io.SUBJECT_FILES["queries"], io.queries_to_json(s.queries))
        io.write_bundle_masks(d, s.bundle_masks)
        io.write_labels(d / "truth.csv", s.truth)
        if args.with_dwi:
            io.write_volume(d / "dwi.vol", s.dwi)
            io.write_json(d / "scheme.json", io.scheme_to_json(s.scheme))
        outputs.append(d.name)
    io.write_json(out / "config.json", cfg.to_dict())
    io.write_json(out / "expected_agreement.json", fx.expected_agreement)
    _write_manifest(out, "synth", cfg, outputs + ["config.json"])
    print(f"wrote {len(fx.subjects)} subjects to {out}")


def cmd_supervise(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    written = []
    for d in _subject_dirs(args.subject):
        streamlines = io.read_tractogram(d / io.SUBJECT_FILES["tractogram"])
        inputs = SupervisorInputs(
            parcellation=io.read_volume(_need_file(d / io.SUBJECT_FILES["parcellation"])),
            queries=io.queries_from_json(io.read_json(_need_file(d / io.SUBJECT_FILES["queries"]))),
            atlas=io.atlas_from_json(io.read_json(_need_file(d / io.SUBJECT_FILES["atlas"]))),
            bundles=io.read_bundle_masks(d),
            deep_wm=io.read_volume(_need_file(d / io.SUBJECT_FILES["deep_wm"])),
            ventricles=io.read_volume(_need_file(d / io.SUBJECT_FILES["ventricles"])),
            ventricle_radius=cfg.ventricle_radius,
            loop_threshold=cfg.loop_threshold,
            step=cfg.step,
        )
        verdicts = supervise([s.astype(np.float64) for s in streamlines], inputs)
        target = (d if args.in_place else out / d.name)
        target.mkdir(parents=True, exist_ok=True)
        io.write_labels(target / io.SUBJECT_FILES["labels"], verdicts)
        written.append(str(target / io.SUBJECT_FILES["labels"]))
        print(f"{d.name}: {len(verdicts)} streamlines labelled")
    _write_manifest(out, "supervise", cfg, written)


def _ensemble_report(codes) -> dict:
    by_code, by_tri = class_distribution(codes)
    total = max(len(codes), 1)
    return {
        "n": len(codes),
        "composition": {
            c: {"count": by_code[c], "fraction": by_code[c] / total, "borderline": is_borderline(c)}
            for c in ALL_CODES
        },
        "triclass": {t: {"count": by_tri[t], "fraction": by_tri[t] / total} for t in TRICLASSES},
    }


def cmd_ensemble(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    codes = io.read_labels(_need_file(args.labels))
    from .ensemble import SupervisorVerdict

    report = _ensemble_report([SupervisorVerdict.from_code(c) for c in codes])
    io.write_json(out / "ensemble.json", report)
    lines = [f"{'class':<6}{'count':>8}{'fraction':>10}"]
    for t in TRICLASSES:
        r = report["triclass"][t]
        lines.append(f"{t:<6}{r['count']:>8}{r['fraction']:>10.4f}")
    text = "\n".join(lines) + "\n"
    (out / "ensemble.txt").write_text(text)
    sys.stdout.write(text)
    _write_manifest(out, "ensemble", cfg, ["ensemble.json", "ensemble.txt"])


def cmd_features(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    dirs = _subject_dirs(args.subject)
    table = _region_table(cfg, dirs)
    cfg = RunConfig.from_dict({**cfg.to_dict(), "region_table": list(table)})
    dcfg = cfg.descriptor_config()
    written = []
    for d in dirs:
        vols = _subject_volumes(d, cfg)
        streamlines = io.read_tractogram(d / io.SUBJECT_FILES["tractogram"])
        items = [build_descriptors(s.astype(np.float64), vols, dcfg) for s in streamlines]
        path = out / f"{d.name}.dsc"
        io.write_descriptors(path, items)
        written.append(path.name)
        print(f"{d.name}: {len(items)} descriptor records")
    _write_manifest(out, "features", cfg, written)


def cmd_split(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    names = [d.name for d in _subject_dirs(args.data)]
    sp = split_subjects(names, cfg.ratios, cfg.seed)
    io.write_json(out / "split.json", {"train": list(sp.train), "validation": list(sp.validation), "test": list(sp.test)})
    print(f"train {len(sp.train)}, validation {len(sp.validation)}, test {len(sp.test)}")
    _write_manifest(out, "split", cfg, ["split.json"])


def _split_for(args, ds, cfg) -> Split:
    if args.split:
        sp = _read_split(args.split)
        unknown = set(sp.train + sp.validation + sp.test) - set(ds.names)
        if unknown:
            raise UsageError(f"split names unknown subjects {sorted(unknown)}")
        return sp
    return split_subjects(ds.names, cfg.ratios, cfg.seed)


def cmd_train(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    ds, cfg = _load_dataset(args.data, cfg)
    sp = _split_for(args, ds, cfg)
    log_path = out / "train_log.jsonl"
    with open(log_path, "w") as log:
        def record(r):
            log.write(json.dumps(r, sort_keys=True) + "\n")
            log.flush()
            val = r.get("val", {})
            print(f"epoch {r['epoch']}: loss {r['train_loss']:.4f}"
                  + (f", val acc3 {val['accuracy_3']:.3f}" if val else ""))

        res = train(ds, cfg.star_config(), cfg.train_config(), sp.train, sp.validation, log=record)
    io.write_checkpoint(
        out / "model.ckpt", res.net.state(), res.net.cfg.to_dict(),
        {"run_config": cfg.to_dict(), "split": {"train": list(sp.train), "validation": list(sp.validation), "test": list(sp.test)}},
    )
    _write_manifest(out, "train", cfg, ["model.ckpt", "train_log.jsonl"])


def _load_net(path) -> StarNetwork:
    state, net_cfg, meta = io.read_checkpoint(_need_file(path))
    net = StarNetwork(StarConfig.from_dict(net_cfg), seed=0, dtype=np.float32)
    net.load_state(state)
    return net, meta


def cmd_evaluate(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    net, meta = _load_net(args.checkpoint)
    if not args.config and "run_config" in meta:
        cfg = RunConfig.from_dict({**meta["run_config"], **({"seed": args.seed} if args.seed is not None else {})})
    ds, cfg = _load_dataset(args.data, cfg)
    if args.subjects:
        subjects = args.subjects
    elif "split" in meta and set(meta["split"]["test"]) <= set(ds.names) and meta["split"]["test"]:
        subjects = meta["split"]["test"]
    else:
        subjects = ds.names
    rep = evaluate(net, ds, ds.all_samples(subjects), cfg.ablate, cfg.seed)
    io.write_json(out / "metrics.json", {"subjects": list(subjects), **rep.to_dict()})
    print(f"accuracy_3 {rep.accuracy_3:.4f}, accuracy_16 {rep.accuracy_16:.4f}, "
          f"mean branch accuracy {rep.mean_branch_accuracy():.4f}")
    _write_manifest(out, "evaluate", cfg, ["metrics.json"])


def cmd_ablate(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    ds, cfg = _load_dataset(args.data, cfg)
    sp = _read_split(args.split) if args.split else None
    modes = {"leave-one-out": (LEAVE_ONE_OUT,), "single-input": (SINGLE_INPUT,), "both": (LEAVE_ONE_OUT, SINGLE_INPUT)}[args.mode]
    with open(out / "ablation_log.jsonl", "w") as log:
        res = run_ablation(
            ds, cfg.star_config(), cfg.train_config(), modes, cfg.realizations, cfg.ratios, sp,
            log=lambda r: (log.write(json.dumps(r, sort_keys=True) + "\n"), log.flush()),
        )
    io.write_json(out / "ablation.json", res.to_dict())
    for name, row in res.stats().items():
        a = row["accuracy_3"]
        print(f"{name:<16} acc3 {a['mean']:.4f} +/- {a['std']:.4f}")
    _write_manifest(out, "ablate", cfg, ["ablation.json", "ablation_log.jsonl"])


def _fmt(x):
    return "-" if x is None else f"{x:.4f}"


def _metrics_tables(m: dict):
    lines = [f"{'branch':<8}{'loss':>9}{'acc':>9}{'prec':>9}{'recall':>9}"]
    rows = []
    for s in SUPERVISORS:
        b = m["branches"][s]
        lines.append(f"{s:<8}{_fmt(b.get('loss')):>9}{_fmt(b['accuracy']):>9}{_fmt(b['precision']):>9}{_fmt(b['recall']):>9}")
        rows.append(["branch", s, b.get("loss"), b["accuracy"], b["precision"], b["recall"]])
    lines.append("")
    lines.append(f"accuracy_16 {_fmt(m['accuracy_16'])}  accuracy_3 {_fmt(m['accuracy_3'])}")
    rows.append(["aggregate", "accuracy_16", None, m["accuracy_16"], None, None])
    rows.append(["aggregate", "accuracy_3", None, m["accuracy_3"], None, None])
    if "per_triclass" in m:
        lines.append("")
        lines.append(f"{'class':<8}{'prec':>9}{'recall':>9}{'support':>9}")
        for t in TRICLASSES:
            r = m["per_triclass"][t]
            lines.append(f"{t:<8}{_fmt(r['precision']):>9}{_fmt(r['recall']):>9}{r['support']:>9}")
            rows.append(["triclass", t, None, None, r["precision"], r["recall"]])
    return lines, ["kind", "name", "loss", "accuracy", "precision", "recall"], rows


def _ablation_tables(a: dict):
    lines = [f"{'configuration':<16}{'acc3 mean':>11}{'acc3 std':>10}{'acc16 mean':>12}{'branch mean':>13}"]
    rows = []
    for name, st in a["stats"].items():
        lines.append(
            f"{name:<16}{st['accuracy_3']['mean']:>11.4f}{st['accuracy_3']['std']:>10.4f}"
            f"{st['accuracy_16']['mean']:>12.4f}{st['mean_branch_accuracy']['mean']:>13.4f}"
        )
        rows.append([name, st["accuracy_3"]["mean"], st["accuracy_3"]["std"],
                     st["accuracy_16"]["mean"], st["accuracy_16"]["std"],
                     st["mean_branch_accuracy"]["mean"], st["mean_branch_accuracy"]["std"]])
    header = ["configuration", "acc3_mean", "acc3_std", "acc16_mean", "acc16_std", "branch_mean", "branch_std"]
    return lines, header, rows


def cmd_report(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    data = io.read_json(_need_file(args.input))
    if "stats" in data:
        lines, header, rows = _ablation_tables(data)
    elif "branches" in data:
        lines, header, rows = _metrics_tables(data)
    else:
        raise FormatError(f"{args.input}: neither a metrics nor an ablation report")
    text = "\n".join(lines) + "\n"
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(["" if v is None else v for v in row] for row in rows)
    (out / "report.txt").write_text(text)
    (out / "report.csv").write_text(buf.getvalue())
    sys.stdout.write(text)
    _write_manifest(out, "report", cfg, ["report.txt", "report.csv"])


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--seed", type=int, help="override the configured master seed")
    common.add_argument("--output-dir", default=".", help="directory for outputs and the manifest")

    p = argparse.ArgumentParser(prog="tractlabel", description="Supervisor-ensemble streamline labelling and classification.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic subjects with known verdicts")
    s.add_argument("--subjects", type=int, default=6)
    s.add_argument("--streamlines", type=int, default=2000)
    s.add_argument("--with-dwi", action="store_true", help="also write raw DWI and the gradient scheme")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("supervise", parents=[common], help="run the four rule engines")
    s.add_argument("subject", help="subject directory, or a directory of subject directories")
    s.add_argument("--in-place", action="store_true", help="write labels.csv into each subject directory")
    s.set_defaults(func=cmd_supervise)

    s = sub.add_parser("ensemble", parents=[common], help="composition and three-class summary of a label file")
    s.add_argument("labels")
    s.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("features", parents=[common], help="dump the five descriptors per streamline")
    s.add_argument("subject")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("split", parents=[common], help="split subjects into train/validation/test")
    s.add_argument("data")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", parents=[common], help="train the star network")
    s.add_argument("data")
    s.add_argument("--split", help="split.json (default: drawn from the config seed)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="metrics of a checkpoint on labelled subjects")
    s.add_argument("checkpoint")
    s.add_argument("data")
    s.add_argument("--subjects", nargs="+", help="subjects to evaluate (default: the checkpoint's test split)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", parents=[common], help="noise-substitution ablation study")
    s.add_argument("data")
    s.add_argument("--split", help="fixed split.json for every realization")
    s.add_argument("--mode", choices=("leave-one-out", "single-input", "both"), default="both")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("report", parents=[common], help="tables and CSV from metrics or ablation JSON")
    s.add_argument("input")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (UsageError, TractLabelError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
