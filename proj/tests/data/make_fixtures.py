#!/usr/bin/env python3
"""Writes the fixture corpus, vocabulary seeds, synonym pairs, detection
annotations and the difflib / frequency goldens used by the C++ tests.

Run from this directory: python3 make_fixtures.py
"""
import difflib
import json
import random
import re

# (study, patient, order, view, findings, impression, images)
REPORTS = [
    ("p1-s1", "p1", 0, "PA",
     "Moderate left pleural effusion with left lower lobe atelectasis. Heart size is normal. No pneumothorax.",
     "Moderate left effusion. Atelectasis in the left lower lobe.", ["img/p1-s1-pa.jpg"]),
    ("p1-s2", "p1", 1, "AP",
     "Portable AP view. Small left effusion, improved. Patchy opacity at the left base. No pneumothorax.",
     "Improved left effusion. Patchy opacity consistent with atelectasis.", ["img/p1-s2-ap.jpg"]),
    ("p1-s3", "p1", 2, "PA",
     "Mild left effusion is stable. Linear atelectasis at the left base. Lungs otherwise clear.",
     "Stable mild effusion.", ["img/p1-s3-pa.jpg", "img/p1-s3-lat.jpg"]),
    ("p1-s4", "p1", 3, "PA",
     "The effusion has resolved. No focal consolidation. Heart size is normal.",
     "No effusion.", ["img/p1-s4-pa.jpg"]),
    ("p1-s5", "p1", 4, "PA",
     "New right lower lobe consolidation. No effusion. No pneumothorax.",
     "Right lower lobe pneumonia. Recommend follow-up radiograph after treatment.", ["img/p1-s5-pa.jpg"]),
    ("p1-s6", "p1", 5, "AP",
     "Portable AP view. Right lower lobe consolidation has improved. Small right effusion.",
     "Improving pneumonia with small right effusion.", ["img/p1-s6-ap.jpg"]),
    ("p1-s7", "p1", 6, "PA",
     "Consolidation has resolved. Mild right effusion persists. Heart size is normal.",
     "Mild right effusion.", ["img/p1-s7-pa.jpg"]),
    ("p1-s8", "p1", 7, "PA",
     "Lungs are clear. No effusion or pneumothorax.",
     "No acute cardiopulmonary process.", ["img/p1-s8-pa.jpg"]),

    ("p2-s1", "p2", 0, "AP",
     "Endotracheal tube terminates above the carina. Nasogastric tube courses below the left hemidiaphragm. "
     "Bilateral patchy opacity consistent with pulmonary edema.",
     "Moderate pulmonary edema. Lines and tubes in standard position.", ["img/p2-s1-ap.jpg"]),
    ("p2-s2", "p2", 1, "AP",
     "Endotracheal tube unchanged. Nasogastric tube has been removed. Pulmonary edema has worsened. "
     "Small bilateral effusion.",
     "Worsened pulmonary edema with small bilateral effusion.", ["img/p2-s2-ap.jpg"]),
    ("p2-s3", "p2", 2, "AP",
     "Endotracheal tube in place. Severe pulmonary edema. Bilateral effusion is moderate.",
     "Severe pulmonary edema. Suggest clinical correlation.", ["img/p2-s3-ap.jpg"]),
    ("p2-s4", "p2", 3, "AP",
     "Endotracheal tube has been removed. Pulmonary edema improved. Mild bilateral effusion.",
     "Improved pulmonary edema.", ["img/p2-s4-ap.jpg"]),
    ("p2-s5", "p2", 4, "AP",
     "Central venous catheter tip in the superior vena cava. Mild pulmonary edema. Right upper lobe opacity.",
     "Mild pulmonary edema. Right upper lobe opacity may be due to pneumonia.", ["img/p2-s5-ap.jpg"]),
    ("p2-s6", "p2", 5, "AP",
     "Central venous catheter unchanged. Right upper lobe opacity has worsened. No pneumothorax.",
     "Worsened right upper lobe opacity consistent with pneumonia. Recommend CT for further evaluation.",
     ["img/p2-s6-ap.jpg"]),
    ("p2-s7", "p2", 6, "lateral",
     "Central venous catheter has been removed. Right upper lobe opacity has improved. Lungs otherwise clear.",
     "Improving right upper lobe opacity.", ["img/p2-s7-lat.jpg"]),

    ("p3-s1", "p3", 0, "PA",
     "Small nodule in the right upper lobe. No effusion. Heart size is normal.",
     "Right upper lobe nodule. Recommend chest CT.", ["img/p3-s1-pa.jpg"]),
    ("p3-s2", "p3", 1, "lateral",
     "The right upper lobe nodule is stable. Healed left rib fracture. No pneumothorax.",
     "Stable nodule.", ["img/p3-s2-lat.jpg"]),
    ("p3-s3", "p3", 2, "PA",
     "Stable right upper lobe nodule. Xanthogranuloma in the left lower lobe is unchanged. Lungs are clear.",
     "No acute process.", ["img/p3-s3-pa.jpg"]),
    ("p3-s4", "p3", 3, "oblique",
     "Xanthogranuloma is stable. Mild cardiomegaly. No effusion.",
     "Mild cardiomegaly.", ["img/p3-s4-obl.jpg"]),
    ("p3-s5", "p3", 4, "PA",
     "Pacemaker leads in the right ventricle. Mild cardiomegaly, stable. No pulmonary edema.",
     "Stable cardiomegaly. Xanthogranuloma unchanged.", ["img/p3-s5-pa.jpg"]),
    ("p3-s6", "p3", 5, "PA",
     "Pacemaker in place. Moderate cardiomegaly. Small left effusion.",
     "Worsened cardiomegaly with small left effusion.", ["img/p3-s6-pa.jpg"]),

    ("p4-s1", "p4", 0, "PA",
     "Lungs are clear. Heart size is normal. No pneumothorax.",
     "", ["img/p4-s1-pa.jpg"]),
    ("p4-s2", "p4", 1, "PA",
     "Heart enlarged. No pneumothorax.",
     "Heart enlarged.", ["img/p4-s2-pa.jpg"]),
    ("p4-s3", "p4", 2, None,
     "Dr. Smith notes opacity in the left lung. Mild edema. The patient is rotated.",
     "Mild edema. Left lung opacity.", []),
    ("p4-s4", "p4", 3, "AP",
     "Portable AP view. Mild edema has resolved. Small right pneumothorax.",
     "Small right pneumothorax. Follow-up radiograph is advised.", ["img/p4-s4-ap.jpg"]),
]

SEEDS = [
    ("effusion", "abnormalities", False),
    ("pleural effusion", "abnormalities", True),
    ("cardiomegaly", "abnormalities", True),
    ("heart enlarged", "abnormalities", True),
    ("pneumothorax", "abnormalities", False),
    ("atelectasis", "abnormalities", False),
    ("consolidation", "abnormalities", False),
    ("pulmonary edema", "abnormalities", False),
    ("edema", "abnormalities", False),
    ("opacity", "abnormalities", False),
    ("nodule", "abnormalities", True),
    ("rib fracture", "abnormalities", False),
    ("fracture", "abnormalities", False),
    ("pneumonia", "abnormalities", True),
    ("xanthogranuloma", "abnormalities", False),
    ("endotracheal tube", "foreign_bodies", True),
    ("nasogastric tube", "foreign_bodies", True),
    ("pacemaker", "foreign_bodies", True),
    ("central venous catheter", "foreign_bodies", True),
    ("lung", "anatomy", True),
    ("lobe", "anatomy", False),
    ("base", "anatomy", True),
    ("apex", "anatomy", False),
    ("hemidiaphragm", "anatomy", True),
    ("left", "direction", False),
    ("right", "direction", False),
    ("bilateral", "direction", True),
    ("lower", "direction", True),
    ("upper", "direction", False),
    ("mild", "severity", False),
    ("moderate", "severity", True),
    ("severe", "severity", True),
    ("small", "severity", False),
    ("improved", "trend", True),
    ("worsened", "trend", True),
    ("stable", "trend", False),
    ("patchy", "trait", True),
    ("linear", "trait", True),
    ("due to", "relation_terms", True),
    ("consistent with", "relation_terms", True),
]

PAIRS = [("heart enlarged", "cardiomegaly"), ("pulmonary edema", "edema")]

# (study, label, box_pixels, image_size)
ANNOTATIONS = [
    ("p1-s1", "pleural effusion", [256, 320, 480, 500], [512, 512]),
    ("p1-s1", "atelectasis", [300, 280, 460, 400], [512, 512]),
    ("p2-s2", "effusion", [20, 350, 200, 500], [640, 512]),
    ("p2-s2", "effusion", [440, 350, 620, 500], [640, 512]),
    ("p3-s6", "cardiomegaly", [160, 200, 400, 420], [512, 512]),
]


def tokens(s):
    return [t.lower() for t in re.findall(r"[^\s!-/:-@\[-`{-~]+", s)]


def longest_match_counts(texts, terms):
    """Greedy left-to-right longest match over token sequences."""
    seqs = {t: tokens(t) for t in terms}
    counts = {t: 0 for t in terms}
    for text in texts:
        toks = tokens(text)
        i = 0
        while i < len(toks):
            best = None
            for t, seq in seqs.items():
                n = len(seq)
                if toks[i:i + n] == seq and (best is None or n > len(seqs[best])):
                    best = t
            if best is None:
                i += 1
            else:
                counts[best] += 1
                i += len(seqs[best])
    return counts


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def main():
    by_patient = {}
    for r in REPORTS:
        by_patient.setdefault(r[1], []).append(r)
    links = {}
    for rows in by_patient.values():
        rows.sort(key=lambda r: r[2])
        for k, r in enumerate(rows):
            links[r[0]] = (rows[k - 1][0] if k else None, rows[k + 1][0] if k + 1 < len(rows) else None)
    corpus = []
    for sid, pid, order, view, findings, impression, images in REPORTS:
        row = {"study_id": sid, "patient_id": pid, "acquisition_order": order}
        if view is not None:
            row["view"] = view
        row.update({"findings": findings, "impression": impression, "images": images,
                    "prior": links[sid][0], "next": links[sid][1]})
        corpus.append(row)
    write_jsonl("corpus.jsonl", corpus)
    write_jsonl("seeds.jsonl", [{"surface": s, "category": c, "curated": k} for s, c, k in SEEDS])
    write_jsonl("pairs.jsonl", [{"a": a, "b": b} for a, b in PAIRS])
    write_jsonl("annotations.jsonl", [{"study_id": s, "label": l, "box_pixels": b, "image_size": z}
                                      for s, l, b, z in ANNOTATIONS])

    texts = [r[4] for r in REPORTS] + [r[5] for r in REPORTS]
    counts = longest_match_counts(texts, [s for s, _, _ in SEEDS])
    write_jsonl("golden_frequencies.jsonl", [{"surface": s, "frequency": counts[s]} for s, _, _ in SEEDS])

    # difflib ratio over the lexicographically ordered, lowercased pair.
    rng = random.Random(20240607)
    words = [s for s, _, _ in SEEDS] + ["rib fractured", "fractured rib", "mediastinal widening",
                                        "mediastinum widened", "cardiomegally", "pleural effusions"]
    alphabet = "abcde "
    rows = []
    for _ in range(300):
        if rng.random() < 0.5:
            a, b = rng.choice(words), rng.choice(words)
        else:
            a = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))
            b = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))
        x, y = sorted([" ".join(a.lower().split()), " ".join(b.lower().split())])
        rows.append({"a": a, "b": b, "ratio": difflib.SequenceMatcher(None, x, y, autojunk=False).ratio()})
    write_jsonl("golden_similarity.jsonl", rows)

    for s, c, k in SEEDS:
        print(f"{s:25s} {c:15s} curated={k!s:5s} freq={counts[s]}")


if __name__ == "__main__":
    main()
