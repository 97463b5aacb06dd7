"""Seeded synthetic report corpus for tests, demos and the ablation harness."""

import numpy as np

from ..normalizer import CleanReport
from ..taxonomy import LabelSchema, enforce_exclusion

# label -> (findings phrase, impression phrase)
PHRASES = {
    "肺纹理增多": ("双肺纹理增多、紊乱", "双肺纹理增多"),
    "肺纤维索条影": ("右肺中野见纤维索条影", "右肺纤维索条影"),
    "心影增大": ("心影增大，心胸比约0.56", "心影增大"),
    "肺硬结灶": ("左上肺见小片状硬结灶", "左上肺硬结灶"),
    "胸膜增厚": ("双侧顶部胸膜增厚", "双侧顶部胸膜增厚"),
    "主动脉迂曲、硬化": ("主动脉迂曲、硬化，主动脉结钙化", "主动脉迂曲、硬化"),
    "PICC": ("右上肢PICC置管，管端位于上腔静脉走行区", "PICC置管术后"),
    "肺结节": ("右下肺见类圆形结节影", "右下肺结节"),
    "肺内病变": ("左下肺见斑片影，边缘模糊", "左下肺斑片影"),
    "胸膜粘连": ("右侧肋膈角胸膜粘连", "右侧胸膜粘连"),
    "脊柱侧弯、脊柱后凸": ("胸椎向右侧弯", "胸椎侧弯"),
    "胸腔积液": ("右侧胸腔积液", "右侧胸腔积液"),
    "肺间质性病变": ("双肺见多发网格影", "双肺间质性病变"),
}
NEGATED = {
    "胸腔积液": "未见胸腔积液",
    "肺结节": "未见明确结节",
    "心影增大": "心影无增大",
    "胸膜增厚": "无胸膜增厚",
}
NORMAL_FINDINGS = ("双肺纹理清晰，肺门影不大", "纵隔不宽，心影大小形态未见异常", "两膈光滑，肋膈角锐利")
CLINICAL = ("咳嗽", "发热三天", "体检", "胸闷气短", "术前检查", "入院检查")
DIAGNOSES = ("肺炎", "高血压", "冠心病", "体检", "肾造瘘术后", "")


def synthetic_corpus(schema: LabelSchema, n: int, seed: int = 42, max_findings: int = 3,
                     negation_rate: float = 0.3, prefix: str = "SYN"):
    """``n`` (CleanReport, secondary vector) pairs; label phrases are the sole signal."""
    rng = np.random.default_rng(seed)
    diseases = [d for d in schema.secondary_labels if d in PHRASES]
    out = []
    for i in range(n):
        k = int(rng.integers(0, max_findings + 1))
        chosen = sorted(rng.choice(len(diseases), size=k, replace=False)) if k else []
        pos = [diseases[j] for j in chosen]
        finding_parts = [PHRASES[p][0] for p in pos]
        impression_parts = [PHRASES[p][1] for p in pos]
        finding_parts += list(NORMAL_FINDINGS[: 3 - min(len(pos), 2)])
        if rng.random() < negation_rate:
            cand = [d for d in NEGATED if d not in pos]
            if cand:
                finding_parts.append(NEGATED[cand[int(rng.integers(len(cand)))]])
        if not impression_parts or all(p == "PICC" for p in pos):
            impression_parts.append("未见明显异常")
        report = CleanReport(
            acc=f"{prefix}{i:05d}",
            findings="，".join(finding_parts) + "。",
            impression="。".join(impression_parts) + "。",
            clinical_dx=DIAGNOSES[int(rng.integers(len(DIAGNOSES)))],
            sex="男" if rng.random() < 0.5 else "女",
            age_raw=f"{int(rng.integers(18, 95)):03d}Y00M00D",
            clinical_desc=CLINICAL[int(rng.integers(len(CLINICAL)))],
        )
        report = CleanReport(**{**report.__dict__, "age_years": int(report.age_raw[:3])})
        out.append((report, enforce_exclusion(schema, schema.vector(pos))))
    return out
