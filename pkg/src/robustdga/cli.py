"""Command-line front end: dataset, train, attack, discretize, harden, eval, logo.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.  Progress goes
to standard error; results only to files, each with a ``.manifest.json`` beside it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from datetime import date
from importlib import metadata
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import advtrain as at
from . import container, harness, synth
from . import embedding_attacks as ea
from .classifier import ArchMeta, Classifier, TrainConfig, train
from .dataset import (BENIGN, MALICIOUS, DEFAULT_CAP, FoldSpec, SuffixList, build_dataset,
                      file_sha256, load_dataset, save_dataset, stratified_folds)
from .discrete_attacks import replay_blackbox
from .discretize import DiscretizerSpec, describe, discretize_batch
from .domain import decode_batch, encode_batch, is_valid_e2ld, read_domain_list
from .errors import DataError
from .metrics import (dumps_json, per_dga_eval, report_from_samples, reports_to_csv,
                      robustness_matrix)

log = logging.getLogger("robustdga")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
STRING_KINDS = ("hotflip", "maskdga", "hyphen", "length", "replay")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- config and manifests -----------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """Flat key=value file; '#' starts a comment; keys use flag spelling without dashes."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            values[k.strip().replace("-", "_")] = v.strip()
    return values


OUTPUT_KEYS = ("out", "out_dir", "domains_out", "embeddings_out", "batch_manifests")


def config_hash(args) -> str:
    """Hash of the settings that determine results; output locations are excluded."""
    skip = ("func", "log_level", "threads", "config") + OUTPUT_KEYS
    items = {k: v for k, v in vars(args).items() if k not in skip}
    blob = json.dumps(items, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _version(pkg):
    try:
        return metadata.version(pkg)
    except metadata.PackageNotFoundError:
        return "unknown"


def run_manifest(args, outputs) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "log_level", "threads")}
    return {
        "schema_version": 1,
        "command": args.command + (f" {args.action}" if getattr(args, "action", None) else ""),
        "seed": args.seed,
        "config": json.loads(json.dumps(cfg, default=str)),
        "config_hash": config_hash(args),
        "versions": {"robustdga": _version("robustdga"), "numpy": np.__version__,
                     "python": platform.python_version()},
        "outputs": {Path(p).name: file_sha256(p) for p in outputs},
    }


def write_text(path, text: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


def finish(args, outputs, manifest_path):
    write_text(manifest_path, dumps_json(run_manifest(args, outputs)))
    log.info("wrote %s", ", ".join(str(p) for p in list(outputs) + [manifest_path]))


def beside(path) -> Path:
    return Path(str(path) + ".manifest.json")


# -- shared helpers -------------------------------------------------------------------

def _load_split(args):
    ds, folds, _ = load_dataset(args.data)
    if not 0 <= args.fold < len(folds):
        raise UsageError(f"--fold must be in [0, {len(folds)})")
    return ds, folds[args.fold]


def _read_inputs(path) -> list[str]:
    domains, skipped = [], 0
    for d in read_domain_list(path):
        if is_valid_e2ld(d):
            domains.append(d)
        else:
            skipped += 1
    if skipped:
        log.warning("skipped %d invalid lines in %s", skipped, path)
    if not domains:
        raise DataError(f"no valid e2LDs in {path}")
    return domains


def _subsample(idx, n, seed):
    if n and n < len(idx):
        return np.sort(np.random.default_rng(seed).choice(idx, n, replace=False))
    return idx


def _eval_config(args) -> harness.EvalConfig:
    return harness.EvalConfig(iterations=args.iterations, hotflip_flips=args.flips,
                              beam_width=args.beam_width, seed=args.seed)


def _attack_list(spec: str):
    if spec == "all":
        return harness.WHITE_BOX, harness.HEURISTIC
    names = [a.strip() for a in spec.split(",") if a.strip()]
    bad = [a for a in names if a not in harness.WHITE_BOX + harness.HEURISTIC]
    if bad:
        raise UsageError(f"unknown attack ids: {', '.join(bad)}")
    return (tuple(a for a in names if a in harness.WHITE_BOX),
            tuple(a for a in names if a in harness.HEURISTIC))


def evaluate_model(model, ds, fold, args) -> tuple[dict, dict]:
    """Clean metrics plus attack reports on malicious test records."""
    X, y = ds.indices(), ds.labels()
    test = fold.test
    mal = _subsample(test[y[test] == MALICIOUS], args.samples, args.seed)
    harness.assert_test_hygiene([ds.records[i].domain for i in mal],
                                [ds.records[i].domain for i in fold.train])
    white, heur = _attack_list(args.attacks)
    reports = harness.white_box_reports(model, X[mal], _eval_config(args), white) if white else {}
    if heur:
        reports.update({k: v for k, v in harness.heuristic_reports(model, X[mal], args.seed).items()
                        if k in heur})
    clean = harness.clean_metrics(model, X[test], y[test])
    return clean, reports


def _per_family(ds, fold, model, bound):
    X = ds.indices()
    test = fold.test
    benign = test[[ds.records[i].label == BENIGN for i in test]]
    fams: dict[str, list[int]] = {}
    for i in test:
        r = ds.records[i]
        if r.label == MALICIOUS:
            fams.setdefault(r.family, []).append(i)
    return per_dga_eval(model, X[benign], {f: X[np.array(v)] for f, v in fams.items()}, bound)


def _at_config(args, hold_out=None) -> at.ATConfig:
    return at.ATConfig(max_epochs=args.epochs, learning_rate=args.lr, seed=args.seed,
                       joint_prob=args.joint_prob, hold_out=hold_out, iterations=args.iterations,
                       cw_search_steps=args.cw_search_steps, beam_width=args.beam_width,
                       steps_per_epoch=args.steps_per_epoch)


def _pools(ds, fold):
    X, y = ds.indices(), ds.labels()
    tr = fold.train
    return X[tr[y[tr] == BENIGN]], X[tr[y[tr] == MALICIOUS]]


def _harden(args, hold_out=None):
    ds, fold = _load_split(args)
    benign, mal = _pools(ds, fold)
    start = Classifier.load(args.init_model) if args.init_model else \
        Classifier.init(ArchMeta(embed_dim=args.width, channels=args.width), args.seed)
    dump = []

    def on_batch(epoch, step, manifest, loss):
        log.info("epoch %d step %d %s loss %.4f", epoch + 1, step + 1, manifest["kind"], loss)
        if args.batch_manifests:
            dump.append(json.dumps(dict(manifest, epoch=epoch, step=step), sort_keys=True))

    model = at.adv_train(start, benign, mal, args.scheme if hold_out is None else "joint",
                         _at_config(args, hold_out), on_batch)
    if args.batch_manifests:
        write_text(args.batch_manifests, "\n".join(dump) + "\n")
    return ds, fold, model


# -- subcommands ---------------------------------------------------------------------------

def cmd_dataset(args):
    out = Path(args.out)
    spec = FoldSpec(k=args.k, seed=args.seed)
    if args.action == "synth":
        ds = synth.generate(synth.SynthConfig(n_benign=args.n_benign, n_malicious=args.n_malicious,
                                              seed=args.seed))
    else:
        for flag in ("benign", "malicious"):
            if not getattr(args, flag):
                raise UsageError(f"dataset build requires --{flag}")
        if args.suffix_list and args.naive:
            raise UsageError("--suffix-list and --naive are mutually exclusive")
        if not args.suffix_list and not args.naive:
            raise UsageError("dataset build requires --suffix-list or --naive")
        psl = SuffixList.from_file(args.suffix_list) if args.suffix_list else None
        cutoff = date.fromisoformat(args.cutoff) if args.cutoff else None
        ds = build_dataset(args.benign, args.malicious, args.cap, cutoff, args.seed, psl)
        for row in ds.report["malformed_rows"]:
            log.warning("malformed row %s", row)
    folds = stratified_folds(ds, spec)
    run = run_manifest(args, [])
    save_dataset(out, ds, folds, {"seed": args.seed, "cap": getattr(args, "cap", None),
                                  "cutoff": getattr(args, "cutoff", None), "run": run})
    log.info("dataset: %s", json.dumps(ds.report, sort_keys=True, default=str))


def cmd_train(args):
    ds, fold = _load_split(args)
    X, y = ds.indices(), ds.labels()
    cfg = TrainConfig(max_epochs=args.epochs, patience=args.patience, batch_size=args.batch_size,
                      learning_rate=args.lr, seed=args.seed)
    model = train(X[fold.train], y[fold.train], X[fold.val], y[fold.val], cfg,
                  arch=ArchMeta(embed_dim=args.width, channels=args.width))
    model.save(args.out)
    metrics = {"schema_version": 1, "history": model.history,
               "test": harness.clean_metrics(model, X[fold.test], y[fold.test])}
    mpath = Path(str(args.out) + ".metrics.json")
    write_text(mpath, dumps_json(metrics))
    log.info("test metrics %s", metrics["test"])
    finish(args, [args.out, mpath], beside(args.out))


def cmd_attack(args):
    model = Classifier.load(args.model)
    outputs = [args.out]
    if args.kind == "replay":
        report = replay_blackbox(args.input, model)
        write_text(args.out, dumps_json(report.to_dict()))
        return finish(args, outputs, beside(args.out))
    texts = _read_inputs(args.input)
    origins = encode_batch(texts)
    rng = np.random.default_rng(args.seed)
    if args.kind in STRING_KINDS:
        reports = harness.white_box_reports(model, origins, _eval_config(args), (args.kind,)) \
            if args.kind in ("hotflip", "maskdga") else \
            {args.kind: harness.heuristic_reports(model, origins, args.seed)[args.kind]}
        report = reports[args.kind]
        adv = None
    else:
        if not args.discretizer and not args.embeddings_out:
            raise UsageError(f"--kind {args.kind} needs --discretizer and/or --embeddings-out")
        cfg = ea.AttackConfig(args.kind, epsilon=args.epsilon or ea.strongest(args.kind).epsilon,
                              kappa=args.kappa, iterations=args.iterations, seed=args.seed)
        V = ea.run_attack(model, model.embed(origins), cfg, rng)
        if args.embeddings_out:
            container.save(args.embeddings_out, {"v_adv": V, "origins": origins},
                           {"kind": "v_adv", "attack": args.kind})
            outputs.append(args.embeddings_out)
        if not args.discretizer:
            write_text(args.out, dumps_json({"schema_version": 1, "attack_id": args.kind,
                                             "sample_count": len(texts)}))
            return finish(args, outputs, beside(args.out))
        spec = DiscretizerSpec.parse(args.discretizer)
        adv = discretize_batch(model, V, spec)
        report = report_from_samples(f"{args.kind}+{spec.name}",
                                             describe(model, origins, adv))
    write_text(args.out, dumps_json(report.to_dict()))
    if args.domains_out and adv is not None:
        write_text(args.domains_out, "\n".join(decode_batch(adv)) + "\n")
        outputs.append(args.domains_out)
    finish(args, outputs, beside(args.out))


def cmd_discretize(args):
    model = Classifier.load(args.model)
    tensors, meta = container.load(args.input)
    if "v_adv" not in tensors:
        raise DataError(f"{args.input} holds no v_adv tensor")
    spec = DiscretizerSpec.parse(args.discretizer)
    adv = discretize_batch(model, tensors["v_adv"].astype(model.dtype), spec)
    write_text(args.out, "\n".join(decode_batch(adv)) + "\n")
    finish(args, [args.out], beside(args.out))


def cmd_harden(args):
    _, _, model = _harden(args, args.hold_out)
    model.save(args.out)
    outputs = [args.out] + ([args.batch_manifests] if args.batch_manifests else [])
    finish(args, outputs, beside(args.out))


def _write_eval(out_dir, name, clean, reports):
    out = Path(out_dir)
    payload = {"schema_version": 1, "model": name, "clean": clean,
               "reports": {k: reports[k].to_dict() for k in sorted(reports)}}
    write_text(out / f"{name}.json", dumps_json(payload))
    write_text(out / f"{name}.csv", reports_to_csv([reports[k] for k in sorted(reports)]))
    return [out / f"{name}.json", out / f"{name}.csv"]


def cmd_eval(args):
    ds, fold = _load_split(args)
    out = Path(args.out_dir)
    files, all_reports = [], {}
    names = [Path(p).stem for p in args.model]
    if len(set(names)) != len(names):
        raise UsageError("model file names must have distinct stems")
    for name, path in zip(names, args.model):
        model = Classifier.load(path)
        clean, reports = evaluate_model(model, ds, fold, args)
        all_reports[name] = reports
        files += _write_eval(out, name, clean, reports)
        fam = _per_family(ds, fold, model, args.bound)
        write_text(out / f"{name}.per_family.json", dumps_json(fam))
        files.append(out / f"{name}.per_family.json")
    mtx = robustness_matrix(all_reports)
    write_text(out / "matrix.csv", mtx.to_csv())
    write_text(out / "matrix.json", dumps_json(mtx.to_json()))
    files += [out / "matrix.csv", out / "matrix.json"]
    finish(args, files, out / "manifest.json")


def cmd_logo(args):
    ds, fold, model = _harden(args, args.group)
    out = Path(args.out_dir)
    model_path = out / f"logo_{args.group}.dgaf"
    out.mkdir(parents=True, exist_ok=True)
    model.save(model_path)
    clean, reports = evaluate_model(model, ds, fold, args)
    name = f"logo_{args.group}"
    files = [model_path] + _write_eval(out, name, clean, reports)
    mtx = robustness_matrix({name: reports},
                            {name: [r for r in at.group_rows(args.group) if r in reports]})
    write_text(out / "matrix.csv", mtx.to_csv())
    write_text(out / "matrix.json", dumps_json(mtx.to_json()))
    files += [out / "matrix.csv", out / "matrix.json"]
    if args.batch_manifests:
        files.append(args.batch_manifests)
    finish(args, files, out / "manifest.json")


# -- parser --------------------------------------------------------------------------------

def _add_eval_flags(p):
    p.add_argument("--samples", type=int, default=0,
                   help="malicious test records to attack (0 = all)")
    p.add_argument("--attacks", default="all",
                   help="comma-separated attack ids or 'all' (32 white-box + hyphen,length)")
    p.add_argument("--iterations", type=int, default=50)
    p.add_argument("--flips", type=int, default=5, help="HotFlip flips")
    p.add_argument("--beam-width", type=int, default=10)


def _add_split_flags(p):
    p.add_argument("--data", help="dataset directory written by 'dataset'")
    p.add_argument("--fold", type=int, default=0)


def _add_at_flags(p):
    p.add_argument("--init-model", help="start from this model instead of a fresh one")
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--joint-prob", type=float, default=0.5)
    p.add_argument("--at-iterations", dest="iterations", type=int, default=50)
    p.add_argument("--cw-search-steps", type=int, default=2)
    p.add_argument("--beam-width", type=int, default=10)
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--batch-manifests", help="write every batch manifest here as JSON lines")


REQUIRED = {
    "dataset": ["out"],
    "train": ["data", "out"],
    "attack": ["kind", "input", "model", "out"],
    "discretize": ["input", "model", "discretizer", "out"],
    "harden": ["data", "out"],
    "eval": ["data", "model", "out_dir"],
    "logo": ["group", "data", "out_dir"],
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="robustdga", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="numeric library thread pool size")
    p.add_argument("--log-level", default="INFO",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--config", help="flat key=value file; explicit flags win")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    d = sub.add_parser("dataset", help="build or synthesize a labeled dataset with folds")
    d.add_argument("action", choices=["build", "synth"])
    d.add_argument("--out")
    d.add_argument("--benign", help="benign domain list, one per line")
    d.add_argument("--malicious", help="CSV family,domain[,first_seen]")
    d.add_argument("--suffix-list", help="public-suffix rules file")
    d.add_argument("--naive", action="store_true", help="treat the last label as the suffix")
    d.add_argument("--cap", type=int, default=DEFAULT_CAP)
    d.add_argument("--cutoff", help="ISO date; later families go to the holdout")
    d.add_argument("--k", type=int, default=5)
    d.add_argument("--n-benign", type=int, default=20000)
    d.add_argument("--n-malicious", type=int, default=20000)
    d.set_defaults(func=cmd_dataset)

    t = sub.add_parser("train", help="train a classifier on one fold")
    _add_split_flags(t)
    t.add_argument("--out")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--patience", type=int, default=5)
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--width", type=int, default=128)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="attack a model on a domain list")
    a.add_argument("--kind", choices=STRING_KINDS + ea.KINDS)
    a.add_argument("--in", dest="input")
    a.add_argument("--model")
    a.add_argument("--out", help="report JSON")
    a.add_argument("--discretizer", help="e.g. lbf_l2 (embedding attacks)")
    a.add_argument("--epsilon", type=float, help="default: strongest grid value")
    a.add_argument("--kappa", type=float, default=100.0)
    a.add_argument("--iterations", type=int, default=50)
    a.add_argument("--flips", type=int, default=5)
    a.add_argument("--beam-width", type=int, default=10)
    a.add_argument("--domains-out", help="write adversarial domains here")
    a.add_argument("--embeddings-out", help="write the v_adv batch here")
    a.set_defaults(func=cmd_attack)

    z = sub.add_parser("discretize", help="turn a v_adv batch into domains")
    z.add_argument("--in", dest="input")
    z.add_argument("--model")
    z.add_argument("--discretizer")
    z.add_argument("--out")
    z.set_defaults(func=cmd_discretize)

    h = sub.add_parser("harden", help="adversarial training")
    _add_split_flags(h)
    h.add_argument("--scheme", choices=at.SCHEMES, default="joint")
    h.add_argument("--hold-out", choices=at.GROUPS)
    h.add_argument("--out")
    _add_at_flags(h)
    h.set_defaults(func=cmd_harden)

    e = sub.add_parser("eval", help="clean metrics, attack reports and robustness matrix")
    _add_split_flags(e)
    e.add_argument("--model", action="append", help="repeatable")
    e.add_argument("--out-dir")
    e.add_argument("--bound", type=float, default=0.01, help="FPR bound for per-family ROC")
    _add_eval_flags(e)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("logo", help="joint AT with one attack group held out, then evaluate")
    _add_split_flags(g)
    g.add_argument("--group", choices=at.GROUPS)
    g.add_argument("--out-dir")
    _add_at_flags(g)
    g.add_argument("--samples", type=int, default=0)
    g.add_argument("--attacks", default="all")
    g.add_argument("--flips", type=int, default=5)
    g.set_defaults(func=cmd_logo)
    return p


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise UsageError("a subcommand is required")
    if args.config:
        try:
            values = read_config(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions} | {a.dest for a in parser._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        # config values act as defaults, so explicit flags still override them
        parser.set_defaults(**{k: v for k, v in values.items() if k in
                               {a.dest for a in parser._actions}})
        sub.set_defaults(**values)
        # argparse converts string defaults with each option's type
        args = parser.parse_args(argv)
        for action in sub._actions:
            if action.dest in values and isinstance(action, argparse._StoreTrueAction):
                setattr(args, action.dest, str(values[action.dest]).lower() in ("1", "true", "yes"))
    missing = [k for k in REQUIRED[args.command] if not getattr(args, k, None)]
    if missing:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.print_usage(sys.stderr)
        raise UsageError(f"{args.command}: missing " +
                         ", ".join("--" + k.replace("_", "-") for k in missing))
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
