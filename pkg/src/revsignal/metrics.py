"""Per-invitation metrics computed from history strictly before creation time.

A TemporalIndex is built once over the full dataset (including changes later
dropped by the relevance filter, so history is never censored). Every query
takes an instant t and only sees events with timestamp < t; a change created
at t is invisible to its own queries.

A person's reviewer-side history never includes changes they own: owning a
change is authoring, not reviewing, so self-comments and self-votes count
toward nothing on the reviewer side.
"""

from __future__ import annotations

import csv
import statistics
from bisect import bisect_left
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import DataError
from .prepare import ParticipationLabel
from .records import (
    ChangeRecord,
    format_instant,
    modules_of,
    parse_instant,
    subsystem_of,
)

#: Canonical variable order; also the tie-break priority during screening.
METRIC_NAMES = (
    "concurrent_reviews",
    "remaining_reviews",
    "familiarity",
    "median_comments",
    "participation_rate",
    "received_invitations",
    "core_member",
    "reviewer_authoring_exp",
    "reviewer_reviewing_exp",
    "patch_size",
    "author_authoring_exp",
    "author_reviewing_exp",
)

#: Experience and patch-property variables only (the comparison model).
BASELINE_METRICS = (
    "reviewer_authoring_exp",
    "reviewer_reviewing_exp",
    "patch_size",
    "author_authoring_exp",
    "author_reviewing_exp",
)

_INT_METRICS = frozenset({
    "concurrent_reviews", "remaining_reviews", "familiarity",
    "received_invitations", "patch_size",
})
_BOOL_METRICS = frozenset({"core_member"})


@dataclass(frozen=True)
class ReviewInstance:
    change_id: str
    reviewer: str
    created_at: datetime
    concurrent_reviews: int
    remaining_reviews: int
    familiarity: int
    median_comments: float
    participation_rate: float
    received_invitations: int
    core_member: bool
    reviewer_authoring_exp: float
    reviewer_reviewing_exp: float
    patch_size: int
    author_authoring_exp: float
    author_reviewing_exp: float
    outcome: bool


def patch_size(change: ChangeRecord) -> int:
    """Churned lines (insertions plus deletions) of the first revision."""
    first = change.revisions[0]
    return sum(f.lines_inserted + f.lines_deleted for f in first.files)


class TemporalIndex:
    """Immutable event index answering strictly-before-t metric queries."""

    def __init__(self, changes, bots: set[str], subsystem_rule: str = "project"):
        changes = list(changes)
        for prev, cur in zip(changes, changes[1:]):
            if (prev.created_at, prev.change_id) > (cur.created_at, cur.change_id):
                raise DataError("build_index requires changes sorted by creation time")
        self.subsystem_rule = subsystem_rule
        self._bots = frozenset(bots)

        # reviewer -> list of (created_at, closed_at, invited, first_part_ts)
        self._reviewer_changes: dict[str, list] = {}
        # (reviewer, author) -> sorted response keys (max of create/participate ts)
        self._familiarity: dict[tuple[str, str], list] = {}
        # reviewer -> subsystem -> list of (created_at, msg_ts_sorted)
        self._subsystem_msgs: dict[str, dict[str, list]] = {}
        # reviewer -> subsystem -> (sorted invite created_ats, sorted response keys)
        self._subsystem_invites: dict[str, dict[str, list]] = {}
        self._subsystem_responses: dict[str, dict[str, list]] = {}
        # reviewer -> sorted invite created_ats (any subsystem)
        self._global_invites: dict[str, list] = {}
        # reviewer -> response keys for invited changes (any subsystem)
        self._global_responses: dict[str, list] = {}
        # reviewer -> earliest +-2 vote timestamp
        self._first_strong_vote: dict[str, datetime] = {}
        # module -> sorted created_ats of changes touching it
        self._module_changes: dict[str, list] = {}
        # (module, owner) -> sorted created_ats of owned changes touching it
        self._module_authored: dict[tuple[str, str], list] = {}
        # (module, reviewer) -> list of (response key, change position)
        self._module_reviewed: dict[tuple[str, str], list] = {}
        # change position -> sorted first-participation ts of its reviewers
        self._participant_times: list[list] = []

        for pos, change in enumerate(changes):
            self._add_change(pos, change)
        for seq in self._module_changes.values():
            seq.sort()
        for seq in self._module_authored.values():
            seq.sort()
        for seq in self._module_reviewed.values():
            seq.sort(key=lambda item: item[0])
        for seq in self._familiarity.values():
            seq.sort()
        for per_sub in self._subsystem_responses.values():
            for seq in per_sub.values():
                seq.sort()
        for seq in self._global_responses.values():
            seq.sort()
        for per_sub in self._subsystem_msgs.values():
            for seq in per_sub.values():
                seq.sort(key=lambda item: item[0])

    def _add_change(self, pos: int, change: ChangeRecord):
        bots = self._bots
        owner = change.owner
        created = change.created_at

        first_part: dict[str, datetime] = {}
        msg_times: dict[str, list] = {}
        for vote in change.votes:
            who = vote.reviewer
            if who in bots or who == owner:
                continue
            if abs(vote.value) == 2:
                prev = self._first_strong_vote.get(who)
                if prev is None or vote.timestamp < prev:
                    self._first_strong_vote[who] = vote.timestamp
            if vote.value != 0:
                prev = first_part.get(who)
                if prev is None or vote.timestamp < prev:
                    first_part[who] = vote.timestamp
        for msg in change.messages:
            who = msg.author
            if who in bots or who == owner:
                continue
            prev = first_part.get(who)
            if prev is None or msg.timestamp < prev:
                first_part[who] = msg.timestamp
            msg_times.setdefault(who, []).append(msg.timestamp)

        invited = {r for r in change.invited_reviewers
                   if r not in bots and r != owner}
        subsystem = subsystem_of(change, self.subsystem_rule)

        self._participant_times.append(sorted(
            max(created, ts) for ts in first_part.values()))

        for who in invited | set(first_part) | set(msg_times):
            entry = (created, change.closed_at, who in invited, first_part.get(who))
            self._reviewer_changes.setdefault(who, []).append(entry)

        for who, ts in first_part.items():
            key = max(created, ts)
            self._familiarity.setdefault((who, owner), []).append(key)

        for who, times in msg_times.items():
            self._subsystem_msgs.setdefault(who, {}).setdefault(
                subsystem, []).append((created, sorted(times)))

        for who in invited:
            self._insort_tail(self._global_invites.setdefault(who, []), created)
            self._insort_tail(
                self._subsystem_invites.setdefault(who, {}).setdefault(subsystem, []),
                created)
            if who in first_part:
                key = max(created, first_part[who])
                self._subsystem_responses.setdefault(who, {}).setdefault(
                    subsystem, []).append(key)
                self._global_responses.setdefault(who, []).append(key)

        modules = modules_of(change)
        for module in modules:
            self._module_changes.setdefault(module, []).append(created)
            self._module_authored.setdefault((module, owner), []).append(created)
            for who, ts in first_part.items():
                self._module_reviewed.setdefault((module, who), []).append(
                    (max(created, ts), pos))

    @staticmethod
    def _insort_tail(seq: list, value):
        # Input changes arrive creation-sorted, so appends stay sorted.
        seq.append(value)

    # -- queries ------------------------------------------------------------

    def workload(self, reviewer: str, t: datetime) -> tuple[int, int]:
        concurrent = remaining = 0
        for created, closed, invited, part_ts in self._reviewer_changes.get(reviewer, ()):
            if created >= t:
                break
            if closed is not None and closed < t:
                continue  # already finished at t
            participated = part_ts is not None and part_ts < t
            if participated:
                concurrent += 1
            elif invited:
                remaining += 1
        return concurrent, remaining

    def familiarity(self, reviewer: str, author: str, t: datetime) -> int:
        keys = self._familiarity.get((reviewer, author))
        return bisect_left(keys, t) if keys else 0

    def median_comments(self, reviewer: str, subsystem: str, t: datetime) -> float:
        history = self._subsystem_msgs.get(reviewer, {}).get(subsystem)
        if not history:
            return 0.0
        counts = []
        for created, times in history:
            if created >= t:
                break
            posted = bisect_left(times, t)
            if posted >= 1:
                counts.append(posted)
        return float(statistics.median(counts)) if counts else 0.0

    def participation_rate(self, reviewer: str, subsystem: str, t: datetime) -> float:
        invites = self._subsystem_invites.get(reviewer, {}).get(subsystem, ())
        received = bisect_left(invites, t) if invites else 0
        if received == 0:
            return 0.0
        responses = self._subsystem_responses.get(reviewer, {}).get(subsystem)
        responded = bisect_left(responses, t) if responses else 0
        return responded / received

    def received_invitations(self, reviewer: str, t: datetime) -> int:
        invites = self._global_invites.get(reviewer)
        return bisect_left(invites, t) if invites else 0

    def core_member(self, reviewer: str, t: datetime) -> bool:
        first = self._first_strong_vote.get(reviewer)
        return first is not None and first < t

    def knows(self, account_id: str) -> bool:
        """True when the account appears anywhere in the indexed history."""
        return (account_id in self._reviewer_changes
                or account_id in self._global_invites
                or any(account_id == owner
                       for _, owner in self._module_authored))

    def lifetime_participation(self, t: datetime) -> dict[str, tuple[int, int]]:
        """Per reviewer: (invitations received, invitations responded) before t."""
        out = {}
        for reviewer, invites in self._global_invites.items():
            received = bisect_left(invites, t)
            if received == 0:
                continue
            responses = self._global_responses.get(reviewer)
            responded = bisect_left(responses, t) if responses else 0
            out[reviewer] = (received, responded)
        return out

    def experience(self, person: str, modules, t: datetime) -> tuple[float, float]:
        if not modules:
            raise DataError("experience requires at least one module")
        authoring_total = 0.0
        reviewing_total = 0.0
        for module in modules:
            seq = self._module_changes.get(module)
            count = bisect_left(seq, t) if seq else 0
            if count == 0:
                continue
            authored = self._module_authored.get((module, person))
            if authored:
                authoring_total += bisect_left(authored, t) / count
            reviewed = self._module_reviewed.get((module, person))
            if reviewed:
                share = 0.0
                for key, pos in reviewed:
                    if key >= t:
                        break
                    others = self._participant_times[pos]
                    share += 1.0 / bisect_left(others, t)
                reviewing_total += share / count
        n = len(modules)
        return authoring_total / n, reviewing_total / n


def build_index(changes, bots: set[str], subsystem_rule: str = "project") -> TemporalIndex:
    return TemporalIndex(changes, bots, subsystem_rule)


def build_instances(changes, labels: list[ParticipationLabel], index: TemporalIndex,
                    subsystem_rule: str | None = None) -> list[ReviewInstance]:
    """Evaluate all 12 metrics for every labeled invitation."""
    rule = subsystem_rule or index.subsystem_rule
    by_id = {c.change_id: c for c in changes}
    instances = []
    for label in labels:
        change = by_id.get(label.change_id)
        if change is None:
            raise DataError(f"label references unknown change {label.change_id!r}")
        t = change.created_at
        reviewer = label.reviewer
        subsystem = subsystem_of(change, rule)
        modules = modules_of(change)
        concurrent, remaining = index.workload(reviewer, t)
        r_auth, r_rev = index.experience(reviewer, modules, t)
        a_auth, a_rev = index.experience(change.owner, modules, t)
        instances.append(ReviewInstance(
            change_id=change.change_id,
            reviewer=reviewer,
            created_at=t,
            concurrent_reviews=concurrent,
            remaining_reviews=remaining,
            familiarity=index.familiarity(reviewer, change.owner, t),
            median_comments=index.median_comments(reviewer, subsystem, t),
            participation_rate=index.participation_rate(reviewer, subsystem, t),
            received_invitations=index.received_invitations(reviewer, t),
            core_member=index.core_member(reviewer, t),
            reviewer_authoring_exp=r_auth,
            reviewer_reviewing_exp=r_rev,
            patch_size=patch_size(change),
            author_authoring_exp=a_auth,
            author_reviewing_exp=a_rev,
            outcome=label.responded,
        ))
    return instances


def instances_to_matrix(instances: list[ReviewInstance],
                        names=METRIC_NAMES) -> tuple[np.ndarray, np.ndarray]:
    """Stack instances into (X, y) with columns in canonical order."""
    rows = []
    for inst in instances:
        rows.append([float(getattr(inst, name)) for name in names])
    X = np.asarray(rows, dtype=float).reshape(len(instances), len(names))
    y = np.asarray([1.0 if inst.outcome else 0.0 for inst in instances])
    return X, y


# ---------------------------------------------------------------------------
# File interface: instances.csv

_COLUMNS = ("change_id", "reviewer", "created_at") + METRIC_NAMES + ("outcome",)


def _format_value(name: str, value) -> str:
    if name in _INT_METRICS:
        return str(int(value))
    if name in _BOOL_METRICS:
        return "true" if value else "false"
    return "%.9g" % float(value)


def save_instances(instances: list[ReviewInstance], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_COLUMNS)
        for inst in instances:
            row = [inst.change_id, inst.reviewer, format_instant(inst.created_at)]
            row += [_format_value(name, getattr(inst, name)) for name in METRIC_NAMES]
            row.append("true" if inst.outcome else "false")
            writer.writerow(row)


def load_instances(path: str | Path) -> list[ReviewInstance]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"instances file not found: {path}")
    instances = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(_COLUMNS) - set(reader.fieldnames):
            raise DataError(f"instances file {path} missing required columns")
        for row in reader:
            kwargs = {
                "change_id": row["change_id"],
                "reviewer": row["reviewer"],
                "created_at": parse_instant(row["created_at"]),
                "outcome": row["outcome"].strip().lower() == "true",
            }
            for name in METRIC_NAMES:
                raw = row[name]
                if name in _INT_METRICS:
                    kwargs[name] = int(raw)
                elif name in _BOOL_METRICS:
                    kwargs[name] = raw.strip().lower() == "true"
                else:
                    kwargs[name] = float(raw)
            instances.append(ReviewInstance(**kwargs))
    return instances
