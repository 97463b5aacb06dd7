"""Command-line entry point: convert, clean, train, label, eval, build-dataset, stats, ablate, llm-label.

Exit codes: 0 ok, 1 usage, 2 input, 3 compute, 4 transport.
"""

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from . import errors
from .errors import CxrError

log = logging.getLogger("cxrlabel")


class UsageError(CxrError):
    category = errors.USAGE
    module = "cli"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers

_OUTPUT_KEYS = {"out", "output", "rejects", "summary", "loss_trace", "audit", "images_out",
                "labels_out", "jobs", "verbose", "func", "command"}


def run_header(args) -> dict:
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
           if k not in _OUTPUT_KEYS}
    digest = hashlib.sha256(json.dumps(cfg, sort_keys=True, ensure_ascii=False, default=str)
                            .encode("utf-8")).hexdigest()[:16]
    return {"tool": "cxrlabel", "version": __version__, "command": args.command,
            "seed": getattr(args, "seed", None), "config_digest": digest}


def header_lines(args):
    h = run_header(args)
    return [f"cxrlabel {h['version']} {h['command']} seed={h['seed']} config={h['config_digest']}"]


def _schema(args):
    from .taxonomy import load_schema
    return load_schema(args.schema)


def _pool_map(fn, items, jobs):
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _need_file(path, what):
    if path is not None and not Path(path).exists():
        raise CxrError(f"{what} not found: {path}")


# ---------------------------------------------------------------- convert

def _convert_one(job):
    from .windowing import WindowParams, convert
    src, dst, wc, ww = job
    wp = WindowParams(wc, ww) if wc is not None else None
    chosen, view = convert(src, dst, wp)
    return str(src), str(dst), chosen.wc, chosen.ww, view


def cmd_convert(args):
    if (args.wc is None) != (args.ww is None):
        raise UsageError("--wc and --ww must be given together")
    src = Path(args.input)
    _need_file(src, "input")
    if src.is_dir():
        out_dir = Path(args.output)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = sorted(p for p in src.iterdir() if p.suffix.lower() in (".dcm", ".raw", ".bin"))
        jobs = [(p, out_dir / (p.stem + ".png"), args.wc, args.ww) for p in files]
    else:
        jobs = [(src, Path(args.output), args.wc, args.ww)]
    results = _pool_map(_convert_one, jobs, args.jobs)
    print("# " + header_lines(args)[0])
    print("input\toutput\twc\tww\tview")
    for s, d, wc, ww, view in results:
        print(f"{s}\t{d}\t{wc:g}\t{ww:g}\t{view}")
    return 0


# ---------------------------------------------------------------- clean

def _clean_one(raw):
    from .errors import NormalizationError
    from .normalizer import clean_report
    try:
        return clean_report(raw), None
    except NormalizationError as exc:
        return None, (exc.reason, str(exc))


def cmd_clean(args):
    from .tables import read_reports, write_table
    header, rows, cols, raws = read_reports(args.input)
    results = _pool_map(_clean_one, raws, args.jobs)
    out_header = list(header) + (["age_years"] if "age_years" not in header else [])
    kept_rows, rejects = [], []
    for row, raw, (clean, err) in zip(rows, raws, results):
        if clean is None:
            rejects.append([raw.acc, err[0], err[1]])
            continue
        new = dict(row)
        for f, col in cols.items():
            new[col] = getattr(clean, f)
        new["age_years"] = str(clean.age_years)
        kept_rows.append(new)
    write_table(args.output, out_header, kept_rows, header_lines(args))
    if args.rejects:
        write_table(args.rejects, ["ACC", "reason", "message"], rejects, header_lines(args))
    print(f"cleaned {len(kept_rows)} reports, rejected {len(rejects)}", file=sys.stderr)
    return 0


def _read_clean(path):
    from .tables import read_clean_reports
    _need_file(path, "reports table")
    return read_clean_reports(path)[2]


def _read_labels(path, schema):
    from .tables import read_label_table
    _need_file(path, "label table")
    return read_label_table(path, schema.secondary_labels)


# ---------------------------------------------------------------- train / label

def _train_config(args, **over):
    from .labeler.model import TrainConfig
    cfg = TrainConfig(learning_rate=args.lr, gamma=args.gamma, alpha=args.alpha,
                      loss_weight=args.loss_weight, epochs=args.epochs, batch_size=args.batch_size,
                      use_dual_encoder=not args.no_dual_encoder, use_hierarchy_head=not args.no_hierarchy,
                      threshold=args.threshold, seed=args.seed)
    return replace(cfg, **over)


def _encoder_config(args):
    from .labeler.model import EncoderConfig
    return EncoderConfig(embedding_dim=args.dim, max_seq_len=args.max_len, pooling=args.pooling,
                         dropout_rate=args.dropout)


def _corpus(args, schema):
    from .labeler.synthetic import synthetic_corpus
    from .taxonomy import enforce_exclusion
    if args.synthetic:
        return synthetic_corpus(schema, args.synthetic, seed=args.seed)
    if not args.reports or not args.labels:
        raise UsageError("give --reports and --labels, or --synthetic N")
    reports = _read_clean(args.reports)
    labels = _read_labels(args.labels, schema)
    missing = [r.acc for r in reports if r.acc not in labels]
    if missing:
        raise CxrError(f"no labels for {len(missing)} reports, e.g. {missing[:3]}")
    return [(r, enforce_exclusion(schema, labels[r.acc])) for r in reports]


def cmd_train(args):
    from .labeler import checkpoint
    from .labeler.train import train
    schema = _schema(args)
    corpus = _corpus(args, schema)
    params = train(corpus, schema, _train_config(args), _encoder_config(args))
    checkpoint.save(params, args.output)
    if args.loss_trace:
        checkpoint.write_loss_trace(params, args.loss_trace)
    print(f"trained on {len(corpus)} samples, final loss {params.loss_trace[-1]:.6f}"
          if params.loss_trace else "trained for 0 epochs", file=sys.stderr)
    return 0


_RULE_STATE = {}


def _rule_one(report):
    from .labeler.rules import rule_label
    schema, lexicon = _RULE_STATE["schema"], _RULE_STATE["lexicon"]
    return rule_label(report, schema, lexicon)


def _init_rules(schema_path, lexicon_path):
    from .labeler.rules import load_lexicon
    from .taxonomy import load_schema
    _RULE_STATE["schema"] = load_schema(schema_path)
    _RULE_STATE["lexicon"] = load_lexicon(lexicon_path)


def rule_vectors(reports, schema_path, lexicon_path, jobs):
    _init_rules(schema_path, lexicon_path)
    if jobs <= 1 or len(reports) < 2:
        return [_rule_one(r) for r in reports]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_rules,
                             initargs=(schema_path, lexicon_path)) as pool:
        return list(pool.map(_rule_one, reports, chunksize=max(1, len(reports) // (4 * jobs))))


def cmd_label(args):
    from .tables import label_rows, write_table
    schema = _schema(args)
    reports = _read_clean(args.reports)
    if args.model:
        from .labeler import checkpoint
        from .labeler.model import predict_many
        params = checkpoint.load(args.model)
        vectors = [p.secondary_labels for p in predict_many(params, reports, schema, args.threshold)]
    else:
        _need_file(args.lexicon, "lexicon")
        vectors = rule_vectors(reports, args.schema, args.lexicon, args.jobs)
    header, rows = label_rows([r.acc for r in reports], vectors, schema.secondary_labels)
    write_table(args.output, header, rows, header_lines(args))
    return 0


# ---------------------------------------------------------------- eval

def cmd_eval(args):
    from .metrics import evaluate, format_table, summary_json
    schema = _schema(args)
    gold = _read_labels(args.gold, schema)
    pred = _read_labels(args.pred, schema)
    missing = sorted(set(gold) - set(pred))
    if missing:
        raise CxrError(f"{len(missing)} gold ACCs have no prediction, e.g. {missing[:3]}")
    accs = list(gold)
    ev = evaluate([gold[a] for a in accs], [pred[a] for a in accs], schema.secondary_labels)
    table = format_table(ev)
    sys.stdout.write(table)
    if args.output:
        Path(args.output).write_text("# " + header_lines(args)[0] + "\n" + table, encoding="utf-8")
    if args.summary:
        Path(args.summary).write_text(summary_json(ev), encoding="utf-8")
    return 0


# ---------------------------------------------------------------- dataset

def cmd_build_dataset(args):
    from .dataset import ExclusionRules, SampleRecord, SplitSpec, apply_exclusions, emit_manifest, split
    from .tables import read_table, write_table

    schema = _schema(args)
    rules = ExclusionRules.from_file(args.exclusions) if args.exclusions else ExclusionRules()
    spec = SplitSpec.parse(args.split, args.seed)
    reports = _read_clean(args.reports)
    header, rows = read_table(args.reports)
    if "pa_image" not in header:
        raise CxrError(f"{args.reports}: build-dataset needs a pa_image column")
    if args.labels:
        labels = _read_labels(args.labels, schema)
    else:
        vecs = rule_vectors(reports, args.schema, args.lexicon, args.jobs)
        labels = {r.acc: v for r, v in zip(reports, vecs)}
    meta_cols = [h for h in header if h in ("bedside", "pneumoconiosis", "irregular", "rib_series")]
    records = []
    for rep, row in zip(reports, rows):
        if rep.acc not in labels:
            raise CxrError(f"no labels for {rep.acc}")
        records.append(SampleRecord(sample_id=rep.acc, pa_image=row["pa_image"], report=rep,
                                    labels=labels[rep.acc], la_image=row.get("la_image") or None,
                                    metadata={c: row[c] for c in meta_cols}))
    kept, rejected = apply_exclusions(records, rules)
    assigned = split(kept, spec)
    emit_manifest(assigned, args.output, schema)
    if args.rejects:
        write_table(args.rejects, ["ACC", "reason"], [[r.sample_id, why] for r, why in rejected],
                    header_lines(args))
    counts = {s: sum(r.split == s for r in assigned) for s in ("train", "val", "test")}
    print(f"kept {len(kept)}, rejected {len(rejected)}; split {counts}", file=sys.stderr)
    return 0


def cmd_stats(args):
    from .dataset import compute_stats, image_table, label_table, load_manifest
    from .tables import format_table
    schema = _schema(args)
    _need_file(args.manifest, "manifest")
    stats = compute_stats(load_manifest(args.manifest, schema), schema)
    img = format_table(*image_table(stats))
    lab = format_table(*label_table(stats))
    sys.stdout.write(img + "\n" + lab)
    hdr = "# " + header_lines(args)[0] + "\n"
    if args.images_out:
        Path(args.images_out).write_text(hdr + img, encoding="utf-8")
    if args.labels_out:
        Path(args.labels_out).write_text(hdr + lab, encoding="utf-8")
    return 0


# ---------------------------------------------------------------- ablation

ABLATIONS = (
    ("full", {}),
    ("w/o hierarchical labels", {"use_hierarchy_head": False}),
    ("w/o dual encoder", {"use_dual_encoder": False}),
)

DEFAULT_ABLATION = {
    "synthetic": {"n": 200, "seed": 42},
    "split": [0.8, 0.1, 0.1],
    "encoder": {"embedding_dim": 16, "max_seq_len": 96, "pooling": "mean", "dropout_rate": 0.1},
    "train": {"learning_rate": 0.01, "epochs": 60, "batch_size": 16},
}


def run_ablation(config: dict, schema, seed: int):
    """Train the three variants on one split and score each on the held-out test part."""
    from .dataset import SplitSpec, split_sizes
    from .labeler.model import EncoderConfig, TrainConfig, predict_many
    from .labeler.synthetic import synthetic_corpus
    from .labeler.train import train
    from .metrics import evaluate
    import numpy as np

    syn = config.get("synthetic", DEFAULT_ABLATION["synthetic"])
    corpus = synthetic_corpus(schema, int(syn["n"]), seed=int(syn.get("seed", seed)))
    spec = SplitSpec(tuple(config.get("split", DEFAULT_ABLATION["split"])), seed)
    n_train, n_val, _ = split_sizes(len(corpus), spec)
    order = np.random.default_rng(seed).permutation(len(corpus))
    train_set = [corpus[i] for i in order[:n_train]]
    test_set = [corpus[i] for i in order[n_train + n_val:]]
    encoder = EncoderConfig(**config.get("encoder", DEFAULT_ABLATION["encoder"]))
    base = TrainConfig(**{**config.get("train", DEFAULT_ABLATION["train"]), "seed": seed})
    rows = []
    for name, over in ABLATIONS:
        params = train(train_set, schema, replace(base, **over), encoder)
        preds = predict_many(params, [r for r, _ in test_set], schema, base.threshold)
        ev = evaluate([lab for _, lab in test_set], [p.secondary_labels for p in preds],
                      schema.secondary_labels)
        rows.append((name, ev.aggregate))
    return rows


def cmd_ablate(args):
    from .tables import format_table
    schema = _schema(args)
    config = dict(DEFAULT_ABLATION)
    if args.config:
        _need_file(args.config, "ablation config")
        config.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    rows = run_ablation(config, schema, args.seed)
    header = ["model", "f1", "weighted_f1", "kappa", "weighted_kappa"]
    body = [[name, f"{a.macro_f1:.4f}", f"{a.weighted_f1:.4f}", f"{a.macro_kappa:.4f}",
             f"{a.weighted_kappa:.4f}"] for name, a in rows]
    table = format_table(header, body)
    sys.stdout.write(table)
    if args.output:
        Path(args.output).write_text("# " + header_lines(args)[0] + "\n" + table, encoding="utf-8")
    return 0


# ---------------------------------------------------------------- llm

def cmd_llm_label(args):
    from .llm_adapter import HttpTransport, MockTransport, label_reports, load_template
    from .tables import label_rows, write_table
    schema = _schema(args)
    tmpl = load_template(args.template)
    reports = _read_clean(args.reports)
    if args.mock:
        _need_file(args.mock, "mock responses")
        transport = MockTransport.from_file(args.mock, model=args.model or "mock-model")
    else:
        transport = HttpTransport(model=args.model)
    results = label_reports([(r.acc, r) for r in reports], tmpl, schema, transport,
                            max_in_flight=args.jobs, audit_path=args.audit)
    failures = [r for r in results.values() if r.response.parsed is None]
    vectors = [results[r.acc].response.parsed or tuple(False for _ in schema.secondary_labels)
               for r in reports]
    header, rows = label_rows([r.acc for r in reports], vectors, schema.secondary_labels)
    write_table(args.output, header, rows, header_lines(args) + [f"model={transport.model}"])
    for f in failures:
        print(f"{f.sample_id}: {f.error or f.response.diagnosis}", file=sys.stderr)
    transport_failures = [f for f in failures if f.error]
    if transport_failures:
        raise errors.TransportError(f"{len(transport_failures)} requests failed")
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="cxrlabel", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cxrlabel {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    def common(sp, schema=True, seed=True, jobs=False):
        if schema:
            sp.add_argument("--schema", help="label schema file (default: packaged schema)")
        if seed:
            sp.add_argument("--seed", type=int, default=0, help="seed for all randomness (default 0)")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
        sp.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    sp = sub.add_parser("convert", help="window a DICOM (or raw+sidecar) image to 8-bit PNG")
    sp.add_argument("--wc", type=float, help="window center (default: first pair in the file)")
    sp.add_argument("--ww", type=float, help="window width (default: first pair in the file)")
    sp.add_argument("input", help="input file or directory")
    sp.add_argument("output", help="output PNG or directory")
    common(sp, schema=False, jobs=True)
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("clean", help="normalize a report table")
    sp.add_argument("--in", dest="input", required=True, help="raw report table (TSV)")
    sp.add_argument("--out", dest="output", required=True, help="cleaned report table")
    sp.add_argument("--rejects", help="rejected records with reason codes")
    common(sp, schema=False, jobs=True)
    sp.set_defaults(func=cmd_clean)

    def model_flags(sp):
        sp.add_argument("--epochs", type=int, default=50)
        sp.add_argument("--lr", type=float, default=1e-3)
        sp.add_argument("--batch-size", type=int, default=16)
        sp.add_argument("--gamma", type=float, default=2.0, help="focal loss gamma")
        sp.add_argument("--alpha", type=float, default=0.25, help="focal loss alpha")
        sp.add_argument("--loss-weight", type=float, default=1.0, help="weight of the primary-label loss")
        sp.add_argument("--dim", type=int, default=64, help="embedding dimension")
        sp.add_argument("--max-len", type=int, default=128, help="max characters per text")
        sp.add_argument("--pooling", choices=("mean", "attention"), default="mean")
        sp.add_argument("--dropout", type=float, default=0.1)
        sp.add_argument("--threshold", type=float, default=0.5)
        sp.add_argument("--no-dual-encoder", action="store_true", help="single encoder over report+clinical text")
        sp.add_argument("--no-hierarchy", action="store_true", help="drop the primary-label head loss")

    sp = sub.add_parser("train", help="train the dual-encoder labeler")
    sp.add_argument("--reports", help="cleaned report table")
    sp.add_argument("--labels", help="gold label table (ACC + 14 label columns)")
    sp.add_argument("--synthetic", type=int, default=0, help="train on N synthetic reports instead")
    sp.add_argument("--out", dest="output", required=True, help="checkpoint path")
    sp.add_argument("--loss-trace", help="per-epoch loss TSV")
    model_flags(sp)
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("label", help="label cleaned reports with a checkpoint or the rule baseline")
    sp.add_argument("--reports", required=True)
    sp.add_argument("--model", help="checkpoint; rule baseline when omitted")
    sp.add_argument("--lexicon", help="rule lexicon TSV (default: packaged)")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--out", dest="output", required=True)
    common(sp, jobs=True)
    sp.set_defaults(func=cmd_label)

    sp = sub.add_parser("eval", help="per-label and aggregate F1/kappa")
    sp.add_argument("--gold", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--out", dest="output", help="write the table here too")
    sp.add_argument("--summary", help="machine-readable JSON summary")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("build-dataset", help="exclusions, 8:1:1 split and manifest")
    sp.add_argument("--reports", required=True, help="cleaned report table with pa_image/la_image columns")
    sp.add_argument("--labels", help="label table (default: rule labels)")
    sp.add_argument("--lexicon", help="rule lexicon when --labels is absent")
    sp.add_argument("--split", default="0.8,0.1,0.1", help="train,val,test ratios")
    sp.add_argument("--exclusions", help="exclusion config JSON")
    sp.add_argument("--out", dest="output", required=True, help="manifest (JSON lines)")
    sp.add_argument("--rejects", help="rejected samples with predicate names")
    common(sp, jobs=True)
    sp.set_defaults(func=cmd_build_dataset)

    sp = sub.add_parser("stats", help="image-distribution and label-frequency tables")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--images-out")
    sp.add_argument("--labels-out")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("ablate", help="full model vs. w/o hierarchy vs. w/o dual encoder")
    sp.add_argument("--config", help="JSON overriding corpus/encoder/train settings")
    sp.add_argument("--out", dest="output")
    common(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("llm-label", help="label reports through a chat model prompt")
    sp.add_argument("--reports", required=True)
    sp.add_argument("--template", help="prompt template (default: packaged reconstruction)")
    sp.add_argument("--mock", help="JSON file of canned responses instead of a live endpoint")
    sp.add_argument("--model", help="model identifier (default: $CXRLABEL_LLM_MODEL)")
    sp.add_argument("--audit", help="append request/response audit lines here")
    sp.add_argument("--out", dest="output", required=True)
    common(sp, seed=False, jobs=True)
    sp.set_defaults(func=cmd_llm_label)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return errors.USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CxrError as exc:
        print(f"error [{exc.module}]: {exc}", file=sys.stderr)
        return exc.category
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return errors.INPUT


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
