"""Deterministic synthetic review history for tests and demos.

The generator plants a known composition (open, self-reviewed, and
branch-merge bookkeeping changes) so the preparation funnel can be audited
against exact counts, and gives reviewers stable personas so fitted models
find real signal. Same seed, same bytes.
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import numpy as np

from .records import (
    AccountRef,
    ChangeRecord,
    ChangeStatus,
    Dataset,
    FileChange,
    MessageRecord,
    RevisionRecord,
    VoteRecord,
)

FIXTURE_SEED = 20210101
FIXTURE_CHANGES = 200

_ORGS = ("alpha.example", "beta.example", "gamma.example", "solo.example")
_PROJECTS = ("widgets", "gadgets")
_FILE_POOL = (
    "src/core/engine.c", "src/core/state.c", "src/core/parse.c",
    "src/net/socket.c", "src/net/proto.c",
    "src/ui/panel.c", "src/ui/dialog.c",
    "lib/util.c", "lib/alloc.c",
    "docs/guide.md", "tools/lint.py",
)
_SUBJECTS = (
    "Fix boundary check in parser",
    "Refactor socket setup",
    "Add retry to dialog flow",
    "Tighten allocator asserts",
    "Update developer guide",
    "Improve lint rule coverage",
    "Handle stale state reload",
    "Reduce panel redraw cost",
)


def _minute(base: datetime, offset: int) -> datetime:
    return base + timedelta(minutes=offset)


def generate_fixture(seed: int = FIXTURE_SEED, n_changes: int = FIXTURE_CHANGES,
                     ) -> tuple[Dataset, dict]:
    """Build the synthetic dataset plus its planted audit counts."""
    rng = np.random.default_rng(seed)
    base = datetime(2021, 1, 1, tzinfo=timezone.utc)

    devs = [f"dev{i:02d}" for i in range(24)]
    accounts = {
        dev: AccountRef(dev, f"Developer {i:02d}", f"{dev}@{_ORGS[i % len(_ORGS)]}")
        for i, dev in enumerate(devs)
    }
    bot = "buildbot"
    accounts[bot] = AccountRef(bot, "Build Bot", f"ci@{_ORGS[0]}", is_bot=False)

    # Stable persona: responsiveness declines with the developer number.
    persona = {dev: 0.92 - 0.70 * (i / (len(devs) - 1)) for i, dev in enumerate(devs)}
    core_devs = set(devs[:6])

    # Disjoint planted buckets checked by the funnel audit.
    open_ids = frozenset(sorted(range(17, n_changes, 20))[:10])
    self_ids = frozenset(sorted(set(range(3, n_changes, 33)) - open_ids)[:6])
    book_ids = frozenset(
        sorted(set(range(11, n_changes, 24)) - open_ids - self_ids)[:8])
    assert not (open_ids & self_ids or open_ids & book_ids or self_ids & book_ids)

    changes = []
    audit_labels = 0
    audit_responded = 0
    for i in range(n_changes):
        created = _minute(base, i * 420)  # one change every 7 hours
        owner = devs[int(rng.integers(0, len(devs)))]
        project = _PROJECTS[0] if rng.random() < 0.6 else _PROJECTS[1]
        change_id = f"chg{i:04d}"
        is_open = i in open_ids
        is_self = i in self_ids
        is_book = i in book_ids

        n_files = int(rng.integers(1, 4))
        picks = rng.choice(len(_FILE_POOL), size=n_files, replace=False)
        files = tuple(
            FileChange(_FILE_POOL[j], int(rng.integers(0, 120)), int(rng.integers(0, 40)))
            for j in sorted(int(p) for p in picks)
        )

        subject = _SUBJECTS[int(rng.integers(0, len(_SUBJECTS)))]
        if is_book:
            description = ("Merge branch 'release' into main" if i % 2 == 0
                           else "merge upstream fixes")
            subject = description
        else:
            description = f"{subject}\n\nDetailed rationale for {change_id}."

        if is_self:
            invited: set[str] = {owner} if i % 2 == 0 else {bot}
        else:
            pool = [d for d in devs if d != owner]
            k = int(rng.integers(2, 6))
            chosen = rng.choice(len(pool), size=k, replace=False)
            invited = {pool[int(c)] for c in chosen}
            if rng.random() < 0.35:
                invited.add(bot)

        votes: list[VoteRecord] = []
        messages: list[MessageRecord] = []
        event_offset = 30
        responders = []
        human_invited = sorted(r for r in invited if r != bot and r != owner)
        for reviewer in human_invited:
            busy = rng.random() < 0.25
            p_respond = persona[reviewer] * (0.55 if busy else 1.0)
            if rng.random() < p_respond:
                responders.append(reviewer)
                ts = _minute(created, event_offset)
                event_offset += int(rng.integers(20, 200))
                if reviewer in core_devs and rng.random() < 0.5:
                    value = 2 if rng.random() < 0.8 else -2
                else:
                    value = 1 if rng.random() < 0.8 else -1
                votes.append(VoteRecord(reviewer, "Code-Review", value, ts))
                if rng.random() < 0.6:
                    messages.append(MessageRecord(
                        reviewer, _minute(ts, 5), f"Reviewed patch {change_id}."))
            elif rng.random() < 0.10:
                # Silent zero-value vote: visible but not a response.
                votes.append(VoteRecord(reviewer, "Code-Review", 0,
                                        _minute(created, event_offset)))
                event_offset += 15

        if bot in invited or rng.random() < 0.25:
            messages.append(MessageRecord(bot, _minute(created, 10), "Build Started"))
            outcome_text = "Build Successful" if rng.random() < 0.8 else "Build Failed"
            messages.append(MessageRecord(bot, _minute(created, 25), outcome_text))

        if is_open:
            status = ChangeStatus.OPEN
            closed = None
        else:
            merged = bool(responders) and rng.random() < 0.85
            status = ChangeStatus.MERGED if merged else ChangeStatus.ABANDONED
            closed = _minute(created, int(rng.integers(1440, 20160)))

        revisions = [RevisionRecord(1, created, files)]
        if rng.random() < 0.3 and not is_open:
            revisions.append(RevisionRecord(
                2, _minute(created, int(rng.integers(600, 1400))), files))

        changes.append(ChangeRecord(
            change_id=change_id,
            project=project,
            created_at=created,
            closed_at=closed,
            status=status,
            owner=owner,
            subject=subject,
            description=description,
            invited_reviewers=frozenset(invited),
            messages=tuple(sorted(messages, key=lambda m: (m.timestamp, m.author))),
            votes=tuple(sorted(votes, key=lambda v: (v.timestamp, v.reviewer))),
            revisions=tuple(revisions),
        ))

        if not (is_open or is_self or is_book):
            audit_labels += len(human_invited)
            audit_responded += len(responders)

    dataset = Dataset(changes=tuple(changes), accounts=accounts)
    audit = {
        "total_changes": n_changes,
        "excluded_open": len(open_ids),
        "excluded_self_reviewed": len(self_ids),
        "excluded_bookkeeping": len(book_ids),
        "relevant_changes": n_changes - len(open_ids) - len(self_ids) - len(book_ids),
        "labels": audit_labels,
        "responded": audit_responded,
        "bots": [bot],
    }
    return dataset, audit
