"""Acquire review data from a Gerrit server or offline JSONL dumps.

Offline JSONL (one change per line, canonical key order) is the interchange
format; live fetches are written to JSONL first and then loaded, so every
downstream stage starts from the same reproducible artifact.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import httpx

from .errors import DataError, IngestError
from .records import (
    AccountRef,
    ChangeRecord,
    ChangeStatus,
    Dataset,
    change_from_json,
    change_to_json,
    parse_instant,
)

log = logging.getLogger(__name__)

#: Detail options requested from the Gerrit REST API.
QUERY_OPTIONS = (
    "DETAILED_LABELS",
    "MESSAGES",
    "DETAILED_ACCOUNTS",
    "ALL_REVISIONS",
    "ALL_FILES",
)

_GUARD = b")]}'"

_STATUS_MAP = {
    "NEW": ChangeStatus.OPEN,
    "OPEN": ChangeStatus.OPEN,
    "MERGED": ChangeStatus.MERGED,
    "ABANDONED": ChangeStatus.ABANDONED,
}


@dataclass
class IngestConfig:
    base_url: str
    query: str
    page_size: int = 500
    start_offset: int = 0
    auth: tuple[str, str] | None = None
    rate_limit: float = 4.0  # requests per second
    max_retries: int = 5

    def __post_init__(self):
        if self.page_size < 1:
            raise DataError("page_size must be >= 1")


def strip_json_guard(body: bytes):
    """Drop Gerrit's XSS guard line (if present) and parse the JSON body."""
    if body.startswith(_GUARD):
        body = body[len(_GUARD):]
        if body[:1] == b"\n":
            body = body[1:]
    try:
        return json.loads(body)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON at byte {exc.pos}: {exc.msg}") from None


class GerritClient:
    """Paginated change fetcher with bounded retry and rate limiting."""

    def __init__(self, config: IngestConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self._sleep = sleep
        self._last_request = 0.0
        auth = config.auth if config.auth else None
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"), auth=auth, transport=transport,
            timeout=30.0,
        )

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _throttle(self):
        if self.config.rate_limit <= 0:
            return
        gap = 1.0 / self.config.rate_limit
        now = time.monotonic()
        wait = self._last_request + gap - now
        if wait > 0:
            self._sleep(wait)
        self._last_request = time.monotonic()

    def _get_page(self, offset: int) -> list[dict]:
        params = [("q", self.config.query), ("n", str(self.config.page_size)),
                  ("start", str(offset))]
        params += [("o", opt) for opt in QUERY_OPTIONS]
        delay = 0.5
        for attempt in range(self.config.max_retries + 1):
            self._throttle()
            try:
                resp = self._client.get("/changes/", params=params)
            except httpx.HTTPError as exc:
                if attempt == self.config.max_retries:
                    raise IngestError(
                        f"network failure after {attempt + 1} attempts at offset "
                        f"{offset}: {exc}", resume_offset=offset)
                log.warning("fetch retry %d at offset %d: %s", attempt + 1, offset, exc)
                self._sleep(delay)
                delay *= 2
                continue
            if 400 <= resp.status_code < 500:
                raise IngestError(
                    f"server rejected request (HTTP {resp.status_code}): "
                    f"{resp.text.strip()}", resume_offset=offset)
            if resp.status_code >= 500:
                if attempt == self.config.max_retries:
                    raise IngestError(
                        f"server error HTTP {resp.status_code} after "
                        f"{attempt + 1} attempts at offset {offset}",
                        resume_offset=offset)
                self._sleep(delay)
                delay *= 2
                continue
            page = strip_json_guard(resp.content)
            if not isinstance(page, list):
                raise IngestError(f"unexpected response shape at offset {offset}",
                                  resume_offset=offset)
            return page
        raise IngestError(f"unreachable retry exit at offset {offset}",
                          resume_offset=offset)

    def fetch_changes(self) -> Iterator[dict]:
        """Yield every raw change document matching the query exactly once."""
        offset = self.config.start_offset
        while True:
            page = self._get_page(offset)
            yield from page
            if not page or not page[-1].get("_more_changes"):
                return
            offset += self.config.page_size


def normalize(raw: dict) -> tuple[ChangeRecord, list[AccountRef]]:
    """Map one raw Gerrit change document onto the interchange record."""
    for key in ("project", "created", "status", "owner"):
        if key not in raw:
            raise DataError(f"raw change missing {key}")
    change_id = str(raw.get("id") or raw.get("change_id") or raw.get("_number") or "")
    if not change_id:
        raise DataError("raw change missing id")
    status_raw = str(raw["status"]).upper()
    if status_raw not in _STATUS_MAP:
        raise DataError(f"unsupported status {raw['status']!r}")
    status = _STATUS_MAP[status_raw]

    accounts: dict[str, AccountRef] = {}

    def account_id(info) -> str:
        if isinstance(info, dict):
            aid = str(info.get("_account_id") or info.get("id") or "")
            if aid and aid not in accounts:
                accounts[aid] = AccountRef(aid, info.get("name", ""), info.get("email", ""))
            return aid
        return str(info)

    owner = account_id(raw["owner"])
    created = _gerrit_instant(raw["created"])
    closed = None
    if status is not ChangeStatus.OPEN:
        stamp = raw.get("submitted") or raw.get("closed") or raw.get("updated")
        if stamp is None:
            raise DataError(f"change {change_id}: closed change lacks a close timestamp")
        closed = _gerrit_instant(stamp)

    invited = set()
    for entry in raw.get("reviewers", {}).get("REVIEWER", []):
        aid = account_id(entry)
        if aid:
            invited.add(aid)

    votes = []
    for label, info in raw.get("labels", {}).items():
        for approval in info.get("all", []):
            aid = account_id(approval)
            if not aid:
                continue
            stamp = approval.get("date")
            # Historical dumps may omit vote timestamps; fall back to the
            # last message by the same account, else the creation instant.
            ts = _gerrit_instant(stamp) if stamp else _vote_fallback(raw, aid, created)
            votes.append(_vote(aid, label, int(approval.get("value", 0)), ts))

    messages = []
    for msg in raw.get("messages", []):
        aid = account_id(msg.get("author", {}))
        if not aid:
            continue  # system-generated entries without an author
        messages.append(
            {"author": aid, "time": _gerrit_instant(msg["date"]), "text": msg.get("message", "")}
        )

    revisions = []
    for _, rev in sorted(raw.get("revisions", {}).items(),
                         key=lambda kv: kv[1].get("_number", 0)):
        files = [
            {"path": path, "ins": int(meta.get("lines_inserted", 0)),
             "del": int(meta.get("lines_deleted", 0))}
            for path, meta in sorted(rev.get("files", {}).items())
            if not path.startswith("/")  # skip magic entries like /COMMIT_MSG
        ]
        revisions.append({
            "number": int(rev.get("_number", len(revisions) + 1)),
            "time": _gerrit_instant(rev.get("created", raw["created"])),
            "files": files,
        })
    if not revisions:
        revisions = [{"number": 1, "time": created, "files": []}]

    doc = {
        "change_id": change_id,
        "project": raw["project"],
        "created": created,
        "closed": closed,
        "status": status.value,
        "owner": owner,
        "subject": raw.get("subject", ""),
        "description": raw.get("description", raw.get("subject", "")),
        "reviewers": sorted(invited),
        "messages": messages,
        "votes": votes,
        "revisions": revisions,
    }
    record = _record_from_normalized(doc)
    return record, list(accounts.values())


def _vote(reviewer, label, value, ts):
    return {"reviewer": reviewer, "label": label, "value": value, "time": ts}


def _vote_fallback(raw, account_id, created):
    latest = None
    for msg in raw.get("messages", []):
        author = msg.get("author", {})
        aid = str(author.get("_account_id") or author.get("id") or "")
        if aid == account_id and "date" in msg:
            ts = _gerrit_instant(msg["date"])
            if latest is None or ts > latest:
                latest = ts
    return latest if latest is not None else created


def _gerrit_instant(value):
    if hasattr(value, "tzinfo"):
        return value
    # Gerrit timestamps look like "2014-02-03 10:12:34.000000000"
    text = str(value).replace(" ", "T")
    if "." in text:
        head, frac = text.split(".", 1)
        text = f"{head}.{frac[:6]}"
    return parse_instant(text)


def _record_from_normalized(doc: dict) -> ChangeRecord:
    serializable = dict(doc)
    serializable["created"] = _iso(doc["created"])
    serializable["closed"] = _iso(doc["closed"]) if doc["closed"] else None
    serializable["messages"] = [
        {**m, "time": _iso(m["time"])} for m in doc["messages"]
    ]
    serializable["votes"] = [
        {**v, "time": _iso(v["time"])} for v in doc["votes"]
    ]
    serializable["revisions"] = [
        {**r, "time": _iso(r["time"])} for r in doc["revisions"]
    ]
    record, _ = change_from_json(serializable)
    return record


def _iso(ts):
    from .records import format_instant
    return format_instant(ts)


# ---------------------------------------------------------------------------
# JSONL dataset files

def load_dataset(path: str | Path) -> Dataset:
    """Load a JSONL dump into a Dataset sorted by creation time.

    Raises DataError naming the offending line for any schema violation.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    changes: list[ChangeRecord] = []
    accounts: dict[str, AccountRef] = {}
    seen_ids: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON: {exc.msg}") from None
            try:
                change, line_accounts = change_from_json(doc)
            except DataError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            if change.change_id in seen_ids:
                raise DataError(f"line {lineno}: duplicate change_id {change.change_id!r}")
            seen_ids.add(change.change_id)
            changes.append(change)
            for acc in line_accounts:
                accounts.setdefault(acc.account_id, acc)
    changes.sort(key=lambda c: (c.created_at, c.change_id))
    return Dataset(changes=tuple(changes), accounts=accounts)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a Dataset as canonical JSONL (stable key order, sorted changes)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(dataset.changes, key=lambda c: (c.created_at, c.change_id))
    with path.open("w", encoding="utf-8") as fh:
        for change in ordered:
            doc = change_to_json(change, dataset.accounts)
            fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def fetch_to_jsonl(config: IngestConfig, out_path: str | Path,
                   transport: httpx.BaseTransport | None = None,
                   sleep: Callable[[float], None] = time.sleep) -> Dataset:
    """Fetch all matching changes, normalize, persist as JSONL, and reload."""
    changes: list[ChangeRecord] = []
    accounts: dict[str, AccountRef] = {}
    seen: set[str] = set()
    with GerritClient(config, transport=transport, sleep=sleep) as client:
        for raw in client.fetch_changes():
            record, raw_accounts = normalize(raw)
            if record.change_id in seen:
                continue
            seen.add(record.change_id)
            changes.append(record)
            for acc in raw_accounts:
                accounts.setdefault(acc.account_id, acc)
    dataset = Dataset(changes=tuple(changes), accounts=accounts)
    save_dataset(dataset, out_path)
    return load_dataset(out_path)
