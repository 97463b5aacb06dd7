"""Acceptance suite: thirteen criteria, one PASS/FAIL line each.

Run under pytest (lines appear in the -v output) or directly with
``python3 tests/test_acceptance.py`` for just the summary lines.
"""

import itertools
import json
import math
import os
import random
import re
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import BOILERPLATE, write_dicom  # noqa: E402

from cxrlabel.cli import run  # noqa: E402
from cxrlabel.dataset import DatasetStats, SampleRecord, SplitSpec, percent, split, split_sizes  # noqa: E402
from cxrlabel.errors import MalformedAgeError, NormalizationError  # noqa: E402
from cxrlabel.labeler import checkpoint  # noqa: E402
from cxrlabel.labeler import model as M  # noqa: E402
from cxrlabel.labeler.model import EncoderConfig, TrainConfig, encode, encode_b, init_params, make_batch  # noqa: E402
from cxrlabel.labeler.synthetic import synthetic_corpus  # noqa: E402
from cxrlabel.labeler.train import grad_check, train  # noqa: E402
from cxrlabel.labeler.vocab import Vocab  # noqa: E402
from cxrlabel.metrics import BinaryCounts, LabelMetrics, aggregate, count, evaluate, f1, kappa  # noqa: E402
from cxrlabel.normalizer import REMOVAL_PATTERNS, CleanReport, apply_removal_rules, has_match, parse_age  # noqa: E402
from cxrlabel.tables import label_rows, write_table  # noqa: E402
from cxrlabel.taxonomy import enforce_exclusion, load_schema, propagate  # noqa: E402
from cxrlabel.windowing import WindowParams, map_pixel, map_window  # noqa: E402

SCHEMA = load_schema()
CHECKS = []


def criterion(number, title, budget=None):
    def register(fn):
        CHECKS.append((number, title, budget, fn))
        return fn
    return register


def run_check(number):
    """Run one criterion; returns (ok, line)."""
    _, title, budget, fn = next(c for c in CHECKS if c[0] == number)
    t0 = time.perf_counter()
    try:
        detail = fn() or ""
        ok = True
    except AssertionError as exc:
        detail, ok = f"assertion failed: {exc}", False
    elapsed = time.perf_counter() - t0
    if ok and budget is not None and elapsed >= budget:
        ok, detail = False, f"{detail}; over budget {budget:g} s"
    status = "PASS" if ok else "FAIL"
    return ok, f"[{status}] {number:2d}. {title} ({elapsed:.2f} s) {detail}".rstrip()


# ---------------------------------------------------------------- 1

def _naive_gray(pv, wc, ww):
    if pv <= wc - ww / 2:
        return 0
    if pv > wc + ww / 2:
        return 255
    return min(255, max(0, math.floor(255 * (pv - (wc - ww / 2)) / ww + 0.5)))


@criterion(1, "windowing exactness over all 16-bit values", budget=5)
def c01():
    rng = np.random.default_rng(2024)
    pv = np.arange(65536)
    for _ in range(20):
        wc = float(rng.integers(0, 65536))
        ww = float(rng.integers(1, 8192))
        got = map_window(pv, WindowParams(wc, ww))
        lo, hi = wc - ww / 2, wc + ww / 2
        ref = np.where(pv <= lo, 0, np.where(pv > hi, 255,
                       np.clip(np.floor(255 * (pv - lo) / ww + 0.5), 0, 255))).astype(np.uint8)
        # scalar naive reference on a sample of points, including the window edges
        for p in {0, 65535, int(lo), int(hi), int(wc), *rng.integers(0, 65536, 50).tolist()}:
            if 0 <= p <= 65535:
                assert int(got[p]) == _naive_gray(p, wc, ww), (wc, ww, p)
        assert np.array_equal(got, ref), (wc, ww)
        for edge in (lo, hi):
            if 0 <= edge <= 65535:
                assert map_pixel(edge, WindowParams(wc, ww)) in (0, 255)
    return "20 windows x 65536 values"


# ---------------------------------------------------------------- 2

REMOVAL_EXAMPLES = [
    ("，大致同前", "前文后文"),
    ("对比2021-03-23日片：", "前文后文"),
    ("，请结合CT检查。", "前文，后文"),
    ("，随诊复查。", "前文，后文"),
    ("，请注意心功能", "前文后文"),
    ("，较前稍减轻", "前文后文"),
    (BOILERPLATE, "前文后文"),
]


@criterion(2, "boilerplate regex golden suite and fuzz fixpoint", budget=5)
def c02():
    for row, (matched, expected) in enumerate(REMOVAL_EXAMPLES):
        m = re.search(REMOVAL_PATTERNS[row], "前文" + matched + "后文")
        assert m is not None and m.group(0) == matched, row + 1
        assert apply_removal_rules("前文" + matched + "后文") == expected, row + 1
    assert apply_removal_rules("心影饱满，请结合CT检查。两膈光滑") == "心影饱满，两膈光滑"
    rng = random.Random(7)
    filler = "双肺纹理清晰心影不大两膈光滑结节ABC0123"
    for _ in range(200):
        parts = []
        for _ in range(rng.randint(1, 4)):
            parts.append("".join(rng.choice(filler) for _ in range(rng.randint(0, 8))))
            parts.append(rng.choice(REMOVAL_EXAMPLES)[0])
            parts.append(rng.choice(["", "，", "。"]))
        out = apply_removal_rules("".join(parts))
        assert not has_match(out)
        assert apply_removal_rules(out) == out
    return "7 rows, 200 fuzz cases"


# ---------------------------------------------------------------- 3

@criterion(3, "age parsing")
def c03():
    assert parse_age("082Y00M20D") == 82
    assert parse_age("018Y") == 18
    for bad in ("", "82Y", "0A2Y", "abc", " 82Y"):
        try:
            parse_age(bad)
        except MalformedAgeError:
            continue
        raise AssertionError(f"accepted {bad!r}")
    try:
        parse_age("151Y")
        raise AssertionError("accepted 151")
    except NormalizationError:
        pass
    return "082Y00M20D -> 82"


# ---------------------------------------------------------------- 4

PARENTS = {
    "肺纹理增多": "肺部异常", "肺纤维索条影": "肺部异常", "肺硬结灶": "肺部异常", "肺结节": "肺部异常",
    "肺内病变": "肺部异常", "肺间质性病变": "肺部异常", "心影增大": "心脏异常", "胸膜增厚": "胸膜异常",
    "胸膜粘连": "胸膜异常", "胸腔积液": "胸膜异常", "主动脉迂曲、硬化": "主动脉异常",
    "脊柱侧弯、脊柱后凸": "脊柱异常", "PICC": "设备",
}
BODY_PARTS = ("肺部异常", "心脏异常", "胸膜异常", "主动脉异常", "脊柱异常")


def _naive_exclusion(names, vec):
    on = {n for n, v in zip(names, vec) if v}
    disease = any(n not in ("未见明显异常", "PICC") for n in on)
    return tuple((not disease) if n == "未见明显异常" else (n in on) for n in names)


def _naive_propagate(names, primaries, vec):
    on = {PARENTS[n] for n, v in zip(names, vec) if v and n in PARENTS}
    normal = not any(p in on for p in BODY_PARTS)
    return tuple(normal if p == "正常" else (p in on) for p in primaries)


@criterion(4, "taxonomy brute force over all 2^14 vectors", budget=30)
def c04():
    names, primaries = SCHEMA.secondary_labels, SCHEMA.primary_labels
    for vec in itertools.product((False, True), repeat=14):
        assert enforce_exclusion(SCHEMA, vec) == _naive_exclusion(names, vec), vec
        assert propagate(SCHEMA, vec) == _naive_propagate(names, primaries, vec), vec
    return "16384 vectors"


# ---------------------------------------------------------------- 5

def _record(i):
    r = CleanReport(acc=f"S{i}", findings="x", impression="x", age_raw="040Y", age_years=40)
    return SampleRecord(f"S{i}", f"S{i}.png", r, SCHEMA.vector(["未见明显异常"]))


@criterion(5, "8:1:1 split arithmetic and partition properties")
def c05():
    assert split_sizes(24035) == (19228, 2403, 2404)
    rng = random.Random(11)
    for _ in range(1000):
        n = rng.randint(3, 10 ** 6)
        tr, va, te = split_sizes(n)
        assert tr == 8 * n // 10 and va == n // 10 and te == n - tr - va >= 0, n
    for n in rng.sample(range(3, 400), 20):
        recs = [_record(i) for i in range(n)]
        out = split(recs, SplitSpec(rng_seed=n))
        assert [r.sample_id for r in out] == [r.sample_id for r in recs]
        counts = tuple(sum(r.split == s for r in out) for s in ("train", "val", "test"))
        assert counts == split_sizes(n)
        assert [r.split for r in split(recs, SplitSpec(rng_seed=n))] == [r.split for r in out]
    return "24035 -> 19228/2403/2404; 1000 random N"


# ---------------------------------------------------------------- 6

@criterion(6, "label frequency percentages")
def c06():
    stats = DatasetStats({}, {"未见明显异常": 16714, "肺纹理增多": 23429}, 47886)
    assert percent(16714, 47886) == "34.90%"
    assert percent(23429, 47886) == "48.93%"
    assert abs(stats.ratio("未见明显异常") * 100 - 34.90) <= 0.005
    assert abs(stats.ratio("肺纹理增多") * 100 - 48.93) <= 0.005
    return "34.90% and 48.93%"


# ---------------------------------------------------------------- 7

def _naive_f1(g, p):
    tp = sum(a and b for a, b in zip(g, p))
    fp = sum(b and not a for a, b in zip(g, p))
    fn = sum(a and not b for a, b in zip(g, p))
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


def _naive_kappa(g, p):
    n = len(g)
    po = sum(a == b for a, b in zip(g, p)) / n
    pe = sum((g.count(c) / n) * (p.count(c) / n) for c in (0, 1))
    if pe == 1:
        return 1.0 if po == 1 else 0.0
    return (po - pe) / (1 - pe)


@criterion(7, "metric oracles and exhaustive agreement")
def c07():
    g, p = [1, 1, 0, 0], [1, 0, 0, 0]
    assert abs(kappa(g, p) - 0.5) <= 1e-12
    assert abs(f1(count(g, p)) - 2 / 3) <= 1e-12
    agg = aggregate([LabelMetrics("a", 0, 0, 0.8, 0, 30, 100), LabelMetrics("b", 0, 0, 0.6, 0, 10, 100)])
    assert abs(agg.weighted_f1 - 0.75) <= 1e-12
    assert f1(BinaryCounts()) == 0.0
    pairs = 0
    for n in range(1, 7):
        for g in itertools.product((0, 1), repeat=n):
            for p in itertools.product((0, 1), repeat=n):
                assert abs(f1(count(g, p)) - _naive_f1(g, p)) <= 1e-12
                assert abs(kappa(g, p) - _naive_kappa(g, p)) <= 1e-12
                pairs += 1
    return f"{pairs} boolean pairs"


# ---------------------------------------------------------------- 8

@criterion(8, "gradient check against central differences", budget=60)
def c08():
    corpus = synthetic_corpus(SCHEMA, 8, seed=3)
    vocab = Vocab.build(M.report_text(r) + M.clinical_text(r) for r, _ in corpus)
    worst = 0.0
    for pooling in ("mean", "attention"):
        p = init_params(vocab, EncoderConfig(embedding_dim=8, max_seq_len=48, pooling=pooling), seed=2)
        batch = make_batch(p, corpus, SCHEMA)
        worst = max(worst, grad_check(p, batch, TrainConfig(), n_checks=200))
    assert worst < 1e-4, worst

    def flip(grads):
        return {k: -v for k, v in grads.items()}

    faulty = grad_check(p, batch, TrainConfig(), corrupt=flip)
    assert faulty > 1e-1, faulty
    return f"max rel err {worst:.2e}; fault-injected {faulty:.2f}"


# ---------------------------------------------------------------- 9

@criterion(9, "focal loss identities")
def c09():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(1000):
        pr = rng.uniform(1e-6, 1 - 1e-6)
        t = int(rng.integers(0, 2))
        worst = max(worst, abs(M.focal_loss([pr], [t], 0.0, 0.5) - 0.5 * M.bce_loss([pr], [t])))
    assert worst < 1e-9, worst
    # alpha * (1 - p)^gamma * -ln p at p = 1/2
    closed = 0.25 * 0.25 * math.log(2)
    value = M.focal_loss([0.5], [1], 2.0, 0.25)
    assert abs(value - closed) < 1e-12 and abs(value - 0.0433217) <= 1e-6
    return f"point value {value:.7f}"


# ---------------------------------------------------------------- 10

OVERFIT_ENCODER = EncoderConfig(embedding_dim=16, max_seq_len=96)
OVERFIT_TRAIN = TrainConfig(learning_rate=1e-2, epochs=200, batch_size=8, seed=42)


def _micro_f1(params, corpus):
    preds = M.predict_many(params, [r for r, _ in corpus], SCHEMA)
    ev = evaluate([lab for _, lab in corpus], [q.secondary_labels for q in preds], SCHEMA.secondary_labels)
    return ev.aggregate.micro_f1


def _overfit(corpus):
    reached = {}

    def stop_when_fit(epoch, params):
        if (epoch + 1) % 10 == 0 and _micro_f1(params, corpus) >= 0.95:
            reached["epoch"] = epoch + 1
            return False
        return True

    params = train(corpus, SCHEMA, OVERFIT_TRAIN, OVERFIT_ENCODER, on_epoch=stop_when_fit)
    return params, reached.get("epoch")


@criterion(10, "overfit 50 synthetic reports, bit-identical rerun", budget=120)
def c10():
    corpus = synthetic_corpus(SCHEMA, 50, seed=42)
    first, epoch = _overfit(corpus)
    score = _micro_f1(first, corpus)
    assert epoch is not None and score >= 0.95, f"micro-F1 {score:.4f} after 200 epochs"
    second, _ = _overfit(corpus)
    assert checkpoint.to_bytes(first) == checkpoint.to_bytes(second)
    return f"micro-F1 {score:.4f} at epoch {epoch}"


# ---------------------------------------------------------------- 11

@criterion(11, "ablation harness emits all three configurations")
def c11():
    with tempfile.TemporaryDirectory() as d:
        out = Path(d) / "ablation.tsv"
        assert run(["ablate", "--out", str(out)]) == 0
        lines = [l for l in out.read_text(encoding="utf-8").splitlines() if not l.startswith("#")]
    assert lines[0].split("\t") == ["model", "f1", "weighted_f1", "kappa", "weighted_kappa"]
    names = [l.split("\t")[0] for l in lines[1:]]
    assert names == ["full", "w/o hierarchical labels", "w/o dual encoder"]
    for l in lines[1:]:
        assert all(math.isfinite(float(x)) for x in l.split("\t")[1:])
    return "; ".join(f"{l.split(chr(9))[0]} f1={l.split(chr(9))[1]}" for l in lines[1:])


# ---------------------------------------------------------------- 12

@criterion(12, "no weight sharing and head B unused at inference")
def c12():
    corpus = synthetic_corpus(SCHEMA, 12, seed=5)
    vocab = Vocab.build(M.report_text(r) + M.clinical_text(r) for r, _ in corpus)
    params = init_params(vocab, EncoderConfig(embedding_dim=8, max_seq_len=48), seed=1)
    clin = M.clinical_text(corpus[0][0])
    rep = M.report_text(corpus[0][0])
    perturbed = params.copy()
    for name in ("A.emb", "A.W", "A.b"):
        perturbed.tensors[name] += np.random.default_rng(0).normal(size=perturbed.tensors[name].shape)
    assert np.array_equal(encode_b(params, clin), encode_b(perturbed, clin))
    assert not np.array_equal(encode(params, rep, clin)[:8], encode(perturbed, rep, clin)[:8])
    zeroed = params.copy()
    zeroed.tensors["headB.W"][:] = 0
    zeroed.tensors["headB.b"][:] = 7
    reports = [r for r, _ in corpus]
    assert M.predict_many(params, reports, SCHEMA) == M.predict_many(zeroed, reports, SCHEMA)
    return "v_B invariant; predictions unchanged"


# ---------------------------------------------------------------- 13

@criterion(13, "end-to-end scripted CLI session", budget=60)
def c13():
    with tempfile.TemporaryDirectory() as d:
        d = Path(d)
        (d / "dicom").mkdir()
        corpus = synthetic_corpus(SCHEMA, 30, seed=13)
        rng = np.random.default_rng(13)
        for r, _ in corpus[:3]:
            write_dicom(d / "dicom" / f"{r.acc}.dcm", rng.integers(0, 4096, (16, 16), dtype=np.uint16))
        header = ["ACC", "征象描述", "诊断结论", "临床诊断", "病人性别", "年龄", "临床描述", "pa_image"]
        write_table(d / "raw.tsv", header, [[r.acc, r.findings, r.impression, r.clinical_dx, r.sex, r.age_raw,
                                              r.clinical_desc, f"png/{r.acc}.png"] for r, _ in corpus])
        write_table(d / "gold.tsv", *label_rows([r.acc for r, _ in corpus], [lab for _, lab in corpus],
                                                SCHEMA.secondary_labels))
        steps = [
            ["convert", "dicom", "png"],
            ["clean", "--in", "raw.tsv", "--out", "clean.tsv", "--rejects", "rejects.tsv"],
            ["label", "--reports", "clean.tsv", "--out", "pred.tsv"],
            ["build-dataset", "--reports", "clean.tsv", "--labels", "pred.tsv", "--split", "0.8,0.1,0.1",
             "--out", "manifest.jsonl"],
            ["stats", "--manifest", "manifest.jsonl", "--images-out", "images.tsv", "--labels-out", "labels.tsv"],
            ["eval", "--gold", "gold.tsv", "--pred", "pred.tsv", "--out", "eval.tsv", "--summary", "eval.json"],
        ]
        env = dict(os.environ, PYTHONPATH=str(Path(__file__).resolve().parents[1] / "src"))
        for step in steps:
            proc = subprocess.run([sys.executable, "-m", "cxrlabel.cli", *step], cwd=d, env=env,
                                  capture_output=True, text=True)
            assert proc.returncode == 0, f"{step[0]} exited {proc.returncode}: {proc.stderr.strip()}"
        assert len(list((d / "png").glob("*.png"))) == 3
        splits = [json.loads(l)["split"] for l in (d / "manifest.jsonl").read_text(encoding="utf-8").splitlines()]
        assert (splits.count("train"), splits.count("val"), splits.count("test")) == (24, 3, 3)
        for name in ("images.tsv", "labels.tsv", "eval.tsv"):
            assert (d / name).stat().st_size > 0
        summary = json.loads((d / "eval.json").read_text(encoding="utf-8"))
    return f"{len(steps)} commands, rule-label weighted F1 {summary['aggregate']['weighted_f1']:.4f}"


# ---------------------------------------------------------------- drivers

@pytest.mark.parametrize("number", [c[0] for c in CHECKS],
                         ids=[f"c{c[0]:02d}_" + re.sub(r"\W+", "_", c[1]).strip("_") for c in CHECKS])
def test_criterion(number, capsys):
    ok, line = run_check(number)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def main():
    results = [run_check(c[0]) for c in CHECKS]
    for _, line in results:
        print(line)
    print(f"{sum(ok for ok, _ in results)}/{len(results)} criteria passed")
    return 0 if all(ok for ok, _ in results) else 1


if __name__ == "__main__":
    sys.exit(main())
