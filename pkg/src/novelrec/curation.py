"""Mining novel interest transitions from logs and curating SFT data.

A transition example is ``[(C1, C2), C_L]``: the two most recent distinct
clusters a user consumed, followed by a cluster that differs from both.
Balanced curation keeps the top pairs per label so the exported dataset
covers every label; random curation is the low-diversity baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .clustering import ClusterId, ClusterTree
from .corpus import UserHistory, DEFAULT_QUALITY_THRESHOLD
from .errors import ExportError, ParseError, ValidationError

DEFAULT_PER_LABEL_CAP = 10
DEFAULT_PLANNING_LEVEL = 2
DEFAULT_PROMPT_TEMPLATE = (
    "A user watched videos about {desc1} and then about {desc2}. "
    "Predict one new interest this user would enjoy next, different from "
    "both, described in the same style."
)


@dataclass(frozen=True)
class TransitionExample:
    """A mined novel transition: context pair, label, occurrence count."""

    context: tuple[ClusterId, ClusterId]
    label: ClusterId
    support: int = 1

    def __post_init__(self):
        c1, c2 = self.context
        if self.label in (c1, c2):
            raise ValidationError(
                f"label {self.label} is not novel for context ({c1}, {c2})"
            )
        if not (c1.level == c2.level == self.label.level):
            raise ValidationError("context and label must share one level")
        if self.support < 1:
            raise ValidationError(f"support must be >= 1, got {self.support}")

    @property
    def pair_key(self) -> tuple[int, int]:
        return (self.context[0].index, self.context[1].index)


@dataclass
class CuratedDataset:
    """Examples selected for fine-tuning; pairs within a label are distinct."""

    examples: list[TransitionExample]
    planning_level: int = DEFAULT_PLANNING_LEVEL
    per_label_cap: int | None = DEFAULT_PER_LABEL_CAP

    def __post_init__(self):
        seen: set[tuple[int, int, int]] = set()
        per_label: dict[int, int] = {}
        for ex in self.examples:
            key = (*ex.pair_key, ex.label.index)
            if key in seen:
                raise ValidationError(f"duplicate example for pair {ex.pair_key}, label {ex.label}")
            seen.add(key)
            per_label[ex.label.index] = per_label.get(ex.label.index, 0) + 1
        if self.per_label_cap is not None:
            for label, count in per_label.items():
                if count > self.per_label_cap:
                    raise ValidationError(
                        f"label {label} has {count} examples, cap is {self.per_label_cap}"
                    )

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def num_records(self) -> int:
        """Total logged occurrences behind the dataset (sum of supports)."""
        return sum(ex.support for ex in self.examples)

    @property
    def labels(self) -> set[ClusterId]:
        return {ex.label for ex in self.examples}


@dataclass(frozen=True)
class SftRecord:
    prompt: str
    completion: str


def _aggregate(examples: Iterable[TransitionExample]) -> dict[tuple[int, int, int], int]:
    counts: dict[tuple[int, int, int], int] = {}
    level = None
    for ex in examples:
        if level is None:
            level = ex.label.level
        elif ex.label.level != level:
            raise ValidationError("examples span multiple levels")
        key = (*ex.pair_key, ex.label.index)
        counts[key] = counts.get(key, 0) + ex.support
    return counts


def _to_examples(counts: dict[tuple[int, int, int], int], level: int) -> list[TransitionExample]:
    out = []
    for (i, j, lab), support in sorted(counts.items()):
        out.append(
            TransitionExample(
                context=(ClusterId(level, i), ClusterId(level, j)),
                label=ClusterId(level, lab),
                support=support,
            )
        )
    return out


def mine_transitions(
    histories: Iterable[UserHistory],
    tree: ClusterTree,
    level: int = DEFAULT_PLANNING_LEVEL,
    quality_threshold: float = DEFAULT_QUALITY_THRESHOLD,
) -> list[TransitionExample]:
    """Scan each user's high-quality events for novel cluster transitions.

    A transition is emitted when an event's cluster differs from both of
    the user's two most recent distinct prior clusters; identical triples
    aggregate into support counts. Users are independent: concatenating
    two users' histories yields the union of their separate outputs.
    """
    if level not in tree.levels:
        raise ValidationError(f"tree has no level {level}")
    counts: dict[tuple[int, int, int], int] = {}
    for history in histories:
        recent: list[int] = []  # cluster indices, most recent first
        for ev in history.events:
            if ev.quality < quality_threshold:
                continue
            if ev.item_id not in tree:
                raise ValidationError(f"event item {ev.item_id!r} is not in the tree")
            c = tree.assignment_at(ev.item_id, level).index
            if len(recent) >= 2 and c not in recent[:2]:
                key = (recent[1], recent[0], c)
                counts[key] = counts.get(key, 0) + 1
            if c in recent:
                recent.remove(c)
            recent.insert(0, c)
    return _to_examples(counts, level)


def curate_balanced(
    raw: Sequence[TransitionExample], per_label_cap: int = DEFAULT_PER_LABEL_CAP
) -> CuratedDataset:
    """Keep the top ``per_label_cap`` most frequent context pairs per label."""
    if per_label_cap < 1:
        raise ValueError(f"per_label_cap must be >= 1, got {per_label_cap}")
    if not raw:
        return CuratedDataset([], per_label_cap=per_label_cap)
    level = raw[0].label.level
    counts = _aggregate(raw)
    by_label: dict[int, list[tuple[tuple[int, int], int]]] = {}
    for (i, j, lab), support in counts.items():
        by_label.setdefault(lab, []).append(((i, j), support))
    kept: dict[tuple[int, int, int], int] = {}
    for lab, pairs in by_label.items():
        pairs.sort(key=lambda ps: (-ps[1], ps[0]))
        for (i, j), support in pairs[:per_label_cap]:
            kept[(i, j, lab)] = support
    return CuratedDataset(
        _to_examples(kept, level), planning_level=level, per_label_cap=per_label_cap
    )


def curate_random(raw: Sequence[TransitionExample], n: int, seed: int = 0) -> CuratedDataset:
    """Uniform sample of n logged occurrences, the low-diversity baseline.

    Sampling is without replacement over the occurrence multiset (each
    unit of support is one occurrence); draws of the same triple aggregate
    back into a support count, so ``result.num_records == n``.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if n == 0:
        return CuratedDataset([], per_label_cap=None)
    if not raw:
        raise ValueError(f"cannot sample {n} examples from an empty pool")
    level = raw[0].label.level
    examples = _to_examples(_aggregate(raw), level)  # canonical order
    supports = np.array([ex.support for ex in examples])
    total = int(supports.sum())
    if n > total:
        raise ValueError(f"cannot sample {n} of {total} logged occurrences")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(total, size=n, replace=False)
    bounds = np.cumsum(supports)
    owner = np.searchsorted(bounds, chosen, side="right")
    picked = np.bincount(owner, minlength=len(examples))
    kept = [
        TransitionExample(ex.context, ex.label, int(c))
        for ex, c in zip(examples, picked)
        if c > 0
    ]
    return CuratedDataset(kept, planning_level=level, per_label_cap=None)


def render_prompt(template: str, desc1: str, desc2: str) -> str:
    return template.format(desc1=desc1, desc2=desc2)


def export_sft(
    dataset: CuratedDataset,
    tree: ClusterTree,
    template: str = DEFAULT_PROMPT_TEMPLATE,
) -> list[SftRecord]:
    """One prompt/completion record per example.

    The completion is the label cluster's exact normalized description, so
    a generator trained on the export speaks the cluster vocabulary
    verbatim.
    """
    records = []
    for ex in dataset.examples:
        descs = []
        for cid in (*ex.context, ex.label):
            try:
                descs.append(tree.cluster(cid))
            except KeyError:
                raise ExportError(f"dataset references missing cluster {cid}") from None
        c1, c2, label = descs
        records.append(
            SftRecord(
                prompt=render_prompt(template, c1.description_text, c2.description_text),
                completion=label.normalized_description,
            )
        )
    return records


# -- file formats ----------------------------------------------------------


def recover_dataset_from_sft(
    records: Sequence[SftRecord], tree: ClusterTree, level: int = DEFAULT_PLANNING_LEVEL
) -> CuratedDataset:
    """Rebuild (context, label) examples from exported prompt/completion pairs.

    Labels come from exact-matching completions; context descriptions are
    located inside the normalized prompt, longest description first so a
    description that is a prefix of another cannot shadow it. Supports are
    record multiplicities (the export itself collapses them to one each).
    """
    import re

    from .text import normalize_text

    index = {}
    for cluster in tree.clusters_at(level):
        index[cluster.normalized_description] = cluster.id
    by_length = sorted(index, key=lambda d: (-len(d), d))
    counts: dict[tuple[int, int, int], int] = {}
    for rec in records:
        label = index.get(normalize_text(rec.completion))
        if label is None:
            raise ExportError(f"completion {rec.completion!r} matches no cluster at level {level}")
        prompt = normalize_text(rec.prompt)
        taken: list[tuple[int, int, ClusterId]] = []  # (start, end, cid)
        for desc in by_length:
            for m in re.finditer(rf"(?<!\w){re.escape(desc)}(?!\w)", prompt):
                span = (m.start(), m.end())
                if all(span[1] <= s or span[0] >= e for s, e, _ in taken):
                    taken.append((span[0], span[1], index[desc]))
        taken.sort()
        if len(taken) < 2:
            raise ExportError(
                f"could not locate two context descriptions in prompt {rec.prompt!r}"
            )
        c1, c2 = taken[0][2], taken[1][2]
        key = (c1.index, c2.index, label.index)
        counts[key] = counts.get(key, 0) + 1
    return CuratedDataset(_to_examples(counts, level), planning_level=level, per_label_cap=None)


def write_transitions(examples: Iterable[TransitionExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            rec = {
                "c1": ex.context[0].index,
                "c2": ex.context[1].index,
                "label": ex.label.index,
                "support": ex.support,
            }
            fh.write(json.dumps(rec) + "\n")


def load_transitions(path, level: int = DEFAULT_PLANNING_LEVEL) -> list[TransitionExample]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append(
                    TransitionExample(
                        context=(
                            ClusterId(level, int(rec["c1"])),
                            ClusterId(level, int(rec["c2"])),
                        ),
                        label=ClusterId(level, int(rec["label"])),
                        support=int(rec.get("support", 1)),
                    )
                )
            except ValidationError:
                raise
            except Exception as exc:
                raise ParseError(f"malformed transition record: {exc}", str(path), lineno) from exc
    return out


def write_sft(records: Iterable[SftRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"prompt": rec.prompt, "completion": rec.completion}) + "\n")


def load_sft(path) -> list[SftRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append(SftRecord(prompt=str(rec["prompt"]), completion=str(rec["completion"])))
            except Exception as exc:
                raise ParseError(f"malformed sft record: {exc}", str(path), lineno) from exc
    return out
