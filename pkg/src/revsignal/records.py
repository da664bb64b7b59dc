"""Canonical domain types for Gerrit-style review data.

All record types are frozen dataclasses: immutable after construction and
safe to share across workers. Timestamps are timezone-aware UTC instants;
temporal comparisons elsewhere in the package use strict ``<``.
"""

from __future__ import annotations

import posixpath
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum

from .errors import DataError

VALID_VOTE_VALUES = (-2, -1, 0, 1, 2)

#: Supported grouping rules for :func:`subsystem_of`.
SUBSYSTEM_RULES = ("project", "top_dir")


class ChangeStatus(str, Enum):
    MERGED = "MERGED"
    ABANDONED = "ABANDONED"
    OPEN = "OPEN"


def parse_instant(text: str) -> datetime:
    """Parse an ISO-8601 timestamp and normalize it to UTC."""
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise DataError(f"bad timestamp {text!r}: {exc}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_instant(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass(frozen=True)
class AccountRef:
    """One account (human or automated) in a dataset."""

    account_id: str
    display_name: str = ""
    email: str = ""
    is_bot: bool = False

    def __post_init__(self):
        if not self.account_id:
            raise DataError("account_id must be non-empty")


@dataclass(frozen=True)
class VoteRecord:
    reviewer: str
    label: str
    value: int
    timestamp: datetime

    def __post_init__(self):
        if self.value not in VALID_VOTE_VALUES:
            raise DataError(f"vote value {self.value} outside -2..+2")


@dataclass(frozen=True)
class MessageRecord:
    author: str
    timestamp: datetime
    text: str


@dataclass(frozen=True)
class FileChange:
    path: str
    lines_inserted: int
    lines_deleted: int

    def __post_init__(self):
        if self.lines_inserted < 0 or self.lines_deleted < 0:
            raise DataError(f"negative churn on {self.path}")


@dataclass(frozen=True)
class RevisionRecord:
    number: int
    created_at: datetime
    files: tuple[FileChange, ...]

    def __post_init__(self):
        if self.number < 1:
            raise DataError("revision numbers start at 1")


@dataclass(frozen=True)
class ChangeRecord:
    """One review request: revisions, invited reviewers, messages, votes."""

    change_id: str
    project: str
    created_at: datetime
    closed_at: datetime | None
    status: ChangeStatus
    owner: str
    subject: str = ""
    description: str = ""
    invited_reviewers: frozenset[str] = field(default_factory=frozenset)
    messages: tuple[MessageRecord, ...] = ()
    votes: tuple[VoteRecord, ...] = ()
    revisions: tuple[RevisionRecord, ...] = ()

    def __post_init__(self):
        if not self.change_id:
            raise DataError("change_id must be non-empty")
        if not self.revisions:
            raise DataError(f"change {self.change_id}: revisions must be non-empty")
        numbers = [r.number for r in self.revisions]
        if numbers != sorted(numbers) or len(set(numbers)) != len(numbers) or numbers[0] != 1:
            raise DataError(
                f"change {self.change_id}: revision numbers must increase from 1"
            )
        if self.status in (ChangeStatus.MERGED, ChangeStatus.ABANDONED):
            if self.closed_at is None:
                raise DataError(f"change {self.change_id}: closed change lacks closed_at")
            if self.closed_at < self.created_at:
                raise DataError(f"change {self.change_id}: closed_at precedes created_at")

    @property
    def first_revision(self) -> RevisionRecord:
        return self.revisions[0]


@dataclass
class Dataset:
    """Changes (sorted by creation time) plus the deduplicated account table."""

    changes: tuple[ChangeRecord, ...]
    accounts: dict[str, AccountRef]

    def account(self, account_id: str) -> AccountRef:
        try:
            return self.accounts[account_id]
        except KeyError:
            raise DataError(f"unknown account {account_id!r}") from None


def subsystem_of(change: ChangeRecord, rule: str = "project") -> str:
    """Grouping key of a change under the configured subsystem rule.

    ``project`` uses the Gerrit project name; ``top_dir`` uses the top-level
    directory shared by all changed paths of the first revision, or
    ``"mixed"`` when they disagree (or the revision changed no files).
    """
    if rule == "project":
        return change.project
    if rule == "top_dir":
        tops = {_top_component(f.path) for f in change.first_revision.files}
        if len(tops) == 1:
            return next(iter(tops))
        return "mixed"
    raise DataError(f"unknown subsystem rule {rule!r}")


def _top_component(path: str) -> str:
    head = path.split("/", 1)[0]
    return head if "/" in path else "."


def modules_of(change: ChangeRecord) -> frozenset[str]:
    """Directories touched by the first revision; root-level files map to '.'."""
    dirs = set()
    for f in change.first_revision.files:
        dirs.add(posixpath.dirname(f.path) or ".")
    return frozenset(dirs)


# ---------------------------------------------------------------------------
# Interchange form (one JSON object per change; see ingest for file handling)

def change_to_json(change: ChangeRecord, accounts: dict[str, AccountRef]) -> dict:
    """Interchange dict for one change, embedding the accounts it references."""
    referenced = {change.owner}
    referenced.update(change.invited_reviewers)
    referenced.update(m.author for m in change.messages)
    referenced.update(v.reviewer for v in change.votes)
    return {
        "change_id": change.change_id,
        "project": change.project,
        "created": format_instant(change.created_at),
        "closed": format_instant(change.closed_at) if change.closed_at else None,
        "status": change.status.value,
        "owner": change.owner,
        "subject": change.subject,
        "description": change.description,
        "reviewers": sorted(change.invited_reviewers),
        "accounts": [
            {
                "id": aid,
                "name": accounts[aid].display_name if aid in accounts else "",
                "email": accounts[aid].email if aid in accounts else "",
            }
            for aid in sorted(referenced)
        ],
        "messages": [
            {"author": m.author, "time": format_instant(m.timestamp), "text": m.text}
            for m in change.messages
        ],
        "votes": [
            {
                "reviewer": v.reviewer,
                "label": v.label,
                "value": v.value,
                "time": format_instant(v.timestamp),
            }
            for v in change.votes
        ],
        "revisions": [
            {
                "number": r.number,
                "time": format_instant(r.created_at),
                "files": [
                    {"path": f.path, "ins": f.lines_inserted, "del": f.lines_deleted}
                    for f in r.files
                ],
            }
            for r in change.revisions
        ],
    }


def change_from_json(doc: dict) -> tuple[ChangeRecord, list[AccountRef]]:
    """Rebuild a ChangeRecord (and its account entries) from interchange form."""
    for key in ("change_id", "project", "created", "status", "owner"):
        if key not in doc:
            raise DataError(f"missing {key}")
    try:
        status = ChangeStatus(doc["status"])
    except ValueError:
        raise DataError(f"unsupported status {doc['status']!r}") from None
    change = ChangeRecord(
        change_id=doc["change_id"],
        project=doc["project"],
        created_at=parse_instant(doc["created"]),
        closed_at=parse_instant(doc["closed"]) if doc.get("closed") else None,
        status=status,
        owner=doc["owner"],
        subject=doc.get("subject", ""),
        description=doc.get("description", ""),
        invited_reviewers=frozenset(doc.get("reviewers", [])),
        messages=tuple(
            MessageRecord(m["author"], parse_instant(m["time"]), m.get("text", ""))
            for m in doc.get("messages", [])
        ),
        votes=tuple(
            VoteRecord(v["reviewer"], v.get("label", "Code-Review"), int(v["value"]),
                       parse_instant(v["time"]))
            for v in doc.get("votes", [])
        ),
        revisions=tuple(
            RevisionRecord(
                number=int(r["number"]),
                created_at=parse_instant(r["time"]),
                files=tuple(
                    FileChange(f["path"], int(f["ins"]), int(f["del"]))
                    for f in r.get("files", [])
                ),
            )
            for r in doc.get("revisions", [])
        ),
    )
    accounts = [
        AccountRef(a["id"], a.get("name", ""), a.get("email", ""))
        for a in doc.get("accounts", [])
    ]
    return change, accounts
