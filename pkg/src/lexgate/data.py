"""Labeled sentence-pair datasets: JSONL IO and a synthetic generator.

The generator produces template pairs whose two sentences differ in exactly
one slot word, so surface overlap is identical for positives and negatives
and the label is decidable only through the lexicon: positives substitute a
synonym pair (scored high by the provider), hard negatives substitute a
distinct-entity pair (scored 0). Group-disjoint train/test splitting forces
generalisation through the matrices rather than embedding memorisation.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .lexicon import SimilarityProvider, pair_key

SYNONYM_MIN_SCORE = 0.5  # provider edges at/above this form synonym groups
ENTITY_SCORE = 0.0  # explicit-zero edges form distinct-entity groups

TEMPLATES = [
    "how to {} a card",
    "how do i {} my account",
    "where can i {} the report",
    "please {} the order today",
    "can you {} this request for me",
    "i want to {} my plan",
    "when will the {} arrive",
    "the {} is not working",
    "check the {} status for me",
    "what is the {} balance",
    "show me the {} summary",
    "is the {} ready yet",
]


@dataclass
class OverrideSpec:
    """A per-example keyword designation; ``score`` None means probe-only."""

    kw1: str
    kw2: str
    score: Optional[float] = None


@dataclass
class LabeledExample:
    s1: str
    s2: str
    label: float
    override: Optional[OverrideSpec] = None
    group: Optional[int] = None  # generator bookkeeping, not serialized

    def to_json(self):
        obj = {"s1": self.s1, "s2": self.s2, "label": self.label}
        if self.override is not None:
            obj["kw1"] = self.override.kw1
            obj["kw2"] = self.override.kw2
            if self.override.score is not None:
                obj["kw_score"] = self.override.score
        return obj


def load_jsonl(path):
    """Read LabeledExamples from a JSON-lines file."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({err})") from None
            for field_name in ("s1", "s2", "label"):
                if field_name not in obj:
                    raise ValueError(f"{path}:{lineno}: missing field {field_name!r}")
            override = None
            if "kw1" in obj or "kw2" in obj:
                if not ("kw1" in obj and "kw2" in obj):
                    raise ValueError(f"{path}:{lineno}: kw1 and kw2 must appear together")
                override = OverrideSpec(obj["kw1"], obj["kw2"], obj.get("kw_score"))
            examples.append(
                LabeledExample(obj["s1"], obj["s2"], float(obj["label"]), override)
            )
    return examples


def save_jsonl(path, examples):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json(), ensure_ascii=False) + "\n")


def _pseudoword(rng, taken):
    consonants = "bdfgklmnprstvz"
    vowels = "aeiou"
    while True:
        n_syll = int(rng.integers(2, 4))
        word = "".join(
            consonants[rng.integers(len(consonants))] + vowels[rng.integers(len(vowels))]
            for _ in range(n_syll)
        )
        if word not in taken:
            taken.add(word)
            return word


def template_words():
    words = set()
    for template in TEMPLATES:
        words |= set(template.replace("{}", " ").split())
    return words


def make_synthetic_lexicon(n_syn_groups=30, n_ent_groups=30, seed=0, group_size=3):
    """A provider holding synonym groups, distinct-entity groups, and identity
    entries for the template words."""
    rng = np.random.default_rng(seed)
    taken = set(template_words())
    provider = SimilarityProvider(name=f"synthetic-{seed}")
    for _ in range(n_syn_groups):
        members = [_pseudoword(rng, taken) for _ in range(group_size)]
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                score = round(float(rng.uniform(0.75, 1.0)), 3)
                provider.entries[pair_key(members[i], members[j])] = score
    for _ in range(n_ent_groups):
        members = [_pseudoword(rng, taken) for _ in range(group_size)]
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                provider.entries[pair_key(members[i], members[j])] = ENTITY_SCORE
    for word in sorted(template_words()):
        provider.entries[pair_key(word, word)] = 1.0
    return provider


def lexicon_to_tsv(provider, path):
    lines = ["# word_a\tword_b\tscore"]
    for (a, b), score in sorted(provider.entries.items()):
        lines.append(f"{a}\t{b}\t{score}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def discover_groups(lexicon):
    """Connected components of synonym edges and of explicit-zero edges.

    Returns (synonym_groups, entity_groups) as lists of sorted word lists;
    self-pairs are ignored. Raises when either kind is missing.
    """
    parents = {}

    def find(w):
        parents.setdefault(w, w)
        while parents[w] != w:
            parents[w] = parents[parents[w]]
            w = parents[w]
        return w

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parents[rb] = ra

    edges = {"syn": [], "ent": []}
    for (a, b), score in lexicon.entries.items():
        if a == b:
            continue
        if score >= SYNONYM_MIN_SCORE:
            edges["syn"].append((a, b))
        elif score == ENTITY_SCORE:
            edges["ent"].append((a, b))

    groups = {}
    for kind in ("syn", "ent"):
        parents.clear()
        for a, b in edges[kind]:
            union(a, b)
        comps = {}
        for a, b in edges[kind]:
            for w in (a, b):
                comps.setdefault(find(w), set()).add(w)
        groups[kind] = sorted(sorted(c) for c in comps.values() if len(c) >= 2)
    if not groups["syn"] or not groups["ent"]:
        raise ValueError(
            "lexicon must contain both synonym groups (score >= "
            f"{SYNONYM_MIN_SCORE}) and distinct-entity groups (score == {ENTITY_SCORE})"
        )
    return groups["syn"], groups["ent"]


def generate_synthetic(n, lexicon, seed=0, task_mode="classification"):
    """``n`` template examples with lexicon-decidable labels.

    Positives substitute two synonym-group members into the same template;
    hard negatives substitute two entity-group members. Every example carries
    its slot pair as a probe designation (kw1/kw2 without a score) and its
    group id for split bookkeeping. Deterministic for a fixed seed.
    """
    syn_groups, ent_groups = discover_groups(lexicon)
    rng = np.random.default_rng(seed)
    examples = []
    # entity group ids continue after synonym group ids
    pool = [("syn", i) for i in range(len(syn_groups))] + [
        ("ent", i) for i in range(len(ent_groups))
    ]
    for k in range(n):
        kind, gi = pool[int(rng.integers(len(pool)))]
        group = syn_groups[gi] if kind == "syn" else ent_groups[gi]
        w1, w2 = rng.choice(len(group), size=2, replace=False)
        w1, w2 = group[int(w1)], group[int(w2)]
        template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
        positive = kind == "syn"
        if task_mode == "classification":
            label = 1.0 if positive else 0.0
        else:  # regression distance: smaller = more similar
            label = 0.0 if positive else 1.0
        group_id = gi if kind == "syn" else len(syn_groups) + gi
        examples.append(
            LabeledExample(
                s1=template.format(w1),
                s2=template.format(w2),
                label=label,
                override=OverrideSpec(w1, w2),
                group=group_id,
            )
        )
    return examples


def split_train_test(examples, fraction=0.8, seed=0):
    """Seed-stable split keeping every group entirely on one side.

    Groups are split per label so both sides stay balanced. Examples without
    group ids fall back to a plain shuffled split.
    """
    rng = np.random.default_rng(seed)
    if any(ex.group is None for ex in examples):
        idx = rng.permutation(len(examples))
        cut = int(round(fraction * len(examples)))
        return [examples[i] for i in idx[:cut]], [examples[i] for i in idx[cut:]]
    label_of_group = {}
    for ex in examples:
        label_of_group.setdefault(ex.group, ex.label)
    by_label = {}
    for group, label in sorted(label_of_group.items()):
        by_label.setdefault(label, []).append(group)
    train_groups = set()
    for label in sorted(by_label):
        groups = by_label[label]
        order = rng.permutation(len(groups))
        cut = int(round(fraction * len(groups)))
        train_groups |= {groups[i] for i in order[:cut]}
    train = [ex for ex in examples if ex.group in train_groups]
    test = [ex for ex in examples if ex.group not in train_groups]
    return train, test
