"""Data preparation: bot removal, relevant-change selection, outcome labels.

The funnel runs in a fixed order: detect bots over the whole dump, keep the
changes worth studying, then label each surviving invitation as responded or
not. Each step is a pure function so the counts printed by the CLI can be
audited against the inputs.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

from .records import ChangeRecord, ChangeStatus, Dataset

#: Message openings that mark continuous-integration chatter.
BOT_MESSAGE_PATTERNS = ("build started", "build failed", "build successful")

DEFAULT_BOT_MIN_MATCHES = 20
DEFAULT_BOT_MATCH_RATIO = 0.9

_MERGE_LEAD = re.compile(r"^\s*merge\b")


@dataclass(frozen=True)
class ParticipationLabel:
    """One invited reviewer's decision on one change."""

    change_id: str
    reviewer: str
    responded: bool


@dataclass(frozen=True)
class FunnelCounts:
    """How many changes each preparation step kept or discarded."""

    total: int
    open_excluded: int
    self_reviewed_excluded: int
    bookkeeping_excluded: int
    relevant: int
    labels: int
    responded: int

    def as_dict(self) -> dict:
        return {
            "total_changes": self.total,
            "excluded_open": self.open_excluded,
            "excluded_self_reviewed": self.self_reviewed_excluded,
            "excluded_bookkeeping": self.bookkeeping_excluded,
            "relevant_changes": self.relevant,
            "labels": self.labels,
            "responded": self.responded,
        }


def detect_bots(changes: list[ChangeRecord] | tuple[ChangeRecord, ...],
                known: set[str] | frozenset[str] = frozenset(),
                min_matches: int = DEFAULT_BOT_MIN_MATCHES,
                match_ratio: float = DEFAULT_BOT_MATCH_RATIO) -> set[str]:
    """Return known bot ids plus accounts that mostly post CI messages.

    An account qualifies heuristically when at least ``min_matches`` of its
    messages open with a build-status phrase and those messages make up at
    least ``match_ratio`` of everything it wrote.
    """
    totals: dict[str, int] = {}
    hits: dict[str, int] = {}
    for change in changes:
        for msg in change.messages:
            aid = msg.author
            totals[aid] = totals.get(aid, 0) + 1
            text = msg.text.lower()
            if any(pat in text for pat in BOT_MESSAGE_PATTERNS):
                hits[aid] = hits.get(aid, 0) + 1
    bots = set(known)
    for aid, total in totals.items():
        matched = hits.get(aid, 0)
        if matched >= min_matches and matched >= match_ratio * total:
            bots.add(aid)
    return bots


def is_bookkeeping(change: ChangeRecord) -> bool:
    """True when the description marks a branch-merge bookkeeping change."""
    text = change.description.lower()
    return "merge branch" in text or _MERGE_LEAD.match(text) is not None


def select_relevant(changes: list[ChangeRecord] | tuple[ChangeRecord, ...],
                    bots: set[str]) -> list[ChangeRecord]:
    """Keep closed, externally reviewed, non-bookkeeping changes."""
    kept = []
    for change in changes:
        if change.status is ChangeStatus.OPEN:
            continue
        humans = {r for r in change.invited_reviewers if r not in bots}
        humans.discard(change.owner)
        if not humans:
            continue
        if is_bookkeeping(change):
            continue
        kept.append(change)
    return kept


def label_participation(change: ChangeRecord, bots: set[str]) -> list[ParticipationLabel]:
    """Label each eligible invited reviewer of one change.

    Responding means casting a nonzero vote or writing at least one message;
    a bare zero-value vote alone is silence.
    """
    voters = {v.reviewer for v in change.votes if v.value != 0}
    commenters = {m.author for m in change.messages}
    labels = []
    for reviewer in sorted(change.invited_reviewers):
        if reviewer in bots or reviewer == change.owner:
            continue
        responded = reviewer in voters or reviewer in commenters
        labels.append(ParticipationLabel(change.change_id, reviewer, responded))
    return labels


def run_preparation(dataset: Dataset, known_bots: set[str] | frozenset[str] = frozenset(),
                    min_matches: int = DEFAULT_BOT_MIN_MATCHES,
                    match_ratio: float = DEFAULT_BOT_MATCH_RATIO,
                    ) -> tuple[set[str], list[ChangeRecord], list[ParticipationLabel], FunnelCounts]:
    """Run the whole funnel and report per-step counts."""
    bots = detect_bots(dataset.changes, known_bots, min_matches, match_ratio)

    open_excluded = self_reviewed = bookkeeping = 0
    relevant = []
    for change in dataset.changes:
        if change.status is ChangeStatus.OPEN:
            open_excluded += 1
            continue
        humans = {r for r in change.invited_reviewers if r not in bots}
        humans.discard(change.owner)
        if not humans:
            self_reviewed += 1
            continue
        if is_bookkeeping(change):
            bookkeeping += 1
            continue
        relevant.append(change)

    labels: list[ParticipationLabel] = []
    for change in relevant:
        labels.extend(label_participation(change, bots))
    counts = FunnelCounts(
        total=len(dataset.changes),
        open_excluded=open_excluded,
        self_reviewed_excluded=self_reviewed,
        bookkeeping_excluded=bookkeeping,
        relevant=len(relevant),
        labels=len(labels),
        responded=sum(1 for lab in labels if lab.responded),
    )
    return bots, relevant, labels, counts


# ---------------------------------------------------------------------------
# File interfaces

def save_bots(bots: set[str], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{aid}\n" for aid in sorted(bots)), encoding="utf-8")


def load_bots(path: str | Path) -> set[str]:
    path = Path(path)
    if not path.exists():
        return set()
    return {line.strip() for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()}


def save_labels(labels: list[ParticipationLabel], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["change_id", "reviewer", "responded"])
        for lab in labels:
            writer.writerow([lab.change_id, lab.reviewer,
                             "true" if lab.responded else "false"])


def load_labels(path: str | Path) -> list[ParticipationLabel]:
    from .errors import DataError

    path = Path(path)
    if not path.exists():
        raise DataError(f"labels file not found: {path}")
    labels = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"change_id", "reviewer", "responded"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataError(f"labels file {path} missing columns {sorted(required)}")
        for row in reader:
            flag = row["responded"].strip().lower()
            if flag not in ("true", "false"):
                raise DataError(f"labels file {path}: bad responded value {row['responded']!r}")
            labels.append(ParticipationLabel(row["change_id"], row["reviewer"], flag == "true"))
    return labels
