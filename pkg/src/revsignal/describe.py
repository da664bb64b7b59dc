"""Descriptive statistics over invitations, responsiveness, and community.

Covers how often invited reviewers stay silent, how silence scales with the
size of the invite list, lifetime responsiveness per reviewer, and the
organizational mix of the contributor base.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .prepare import ParticipationLabel

#: Absolute tau thresholds for the conventional magnitude labels.
KENDALL_BOUNDS = ((0.1, "trivial"), (0.3, "small"), (0.5, "medium"))


@dataclass(frozen=True)
class ChangeParticipation:
    change_id: str
    invited: int
    unresponded: int

    @property
    def proportion(self) -> float:
        return self.unresponded / self.invited


@dataclass(frozen=True)
class UnrespondedSummary:
    per_change: tuple[ChangeParticipation, ...]
    changes: int
    changes_with_unresponded: int
    proportion_with_unresponded: float
    median_unresponded_proportion: float
    zero_responder_changes: int

    def as_dict(self) -> dict:
        return {
            "changes": self.changes,
            "changes_with_unresponded": self.changes_with_unresponded,
            "proportion_with_unresponded": self.proportion_with_unresponded,
            "median_unresponded_proportion": self.median_unresponded_proportion,
            "zero_responder_changes": self.zero_responder_changes,
        }


def unresponded_summary(labels: list[ParticipationLabel]) -> UnrespondedSummary:
    """Aggregate silence per change: who was invited and who never replied."""
    grouped: dict[str, list[ParticipationLabel]] = {}
    for label in labels:
        grouped.setdefault(label.change_id, []).append(label)
    per_change = []
    for change_id in sorted(grouped):
        group = grouped[change_id]
        silent = sum(1 for lab in group if not lab.responded)
        per_change.append(ChangeParticipation(change_id, len(group), silent))
    n = len(per_change)
    with_unresponded = sum(1 for c in per_change if c.unresponded > 0)
    proportions = [c.proportion for c in per_change]
    return UnrespondedSummary(
        per_change=tuple(per_change),
        changes=n,
        changes_with_unresponded=with_unresponded,
        proportion_with_unresponded=(with_unresponded / n) if n else 0.0,
        median_unresponded_proportion=float(np.median(proportions)) if n else 0.0,
        zero_responder_changes=sum(1 for c in per_change if c.unresponded == c.invited),
    )


# ---------------------------------------------------------------------------
# Kendall rank correlation (tau-b)

def kendall_tau_b(x, y) -> tuple[float, str]:
    """Tie-corrected rank correlation plus a conventional magnitude label.

    Computed from integer concordance counts (merge-sort inversion counting),
    so the result is exact: (C - D) / sqrt((n0 - n1)(n0 - n2)).
    """
    x = list(x)
    y = list(y)
    n = len(x)
    if n != len(y) or n < 2:
        raise DataError("kendall_tau_b requires two equal-length vectors of size >= 2")
    pairs = sorted(zip(x, y))
    n0 = n * (n - 1) // 2

    def tie_pairs(sorted_values) -> int:
        total = 0
        run = 1
        for a, b in zip(sorted_values, sorted_values[1:]):
            if a == b:
                run += 1
            else:
                total += run * (run - 1) // 2
                run = 1
        total += run * (run - 1) // 2
        return total

    n1 = tie_pairs([p[0] for p in pairs])
    n2 = tie_pairs(sorted(y))
    n3 = tie_pairs(pairs)
    # Sorting by (x, y) leaves same-x runs y-ascending, so every counted
    # inversion crosses an x boundary and is a genuinely discordant pair.
    discordant = _count_inversions([p[1] for p in pairs])
    concordant_minus = n0 - n1 - n2 + n3 - 2 * discordant
    denom_sq = (n0 - n1) * (n0 - n2)
    if denom_sq <= 0:
        raise DataError("kendall_tau_b undefined when a vector is fully tied")
    tau = concordant_minus / math.sqrt(denom_sq)
    magnitude = "large"
    for bound, label in KENDALL_BOUNDS:
        if abs(tau) < bound:
            magnitude = label
            break
    return tau, magnitude


def _count_inversions(values: list) -> int:
    """Pairs (i < j) with values[i] > values[j], by merge sort."""
    if len(values) < 2:
        return 0
    mid = len(values) // 2
    left = values[:mid]
    right = values[mid:]
    count = _count_inversions(left) + _count_inversions(right)
    merged = []
    i = j = 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            count += len(left) - i
            merged.append(right[j])
            j += 1
    merged.extend(left[i:])
    merged.extend(right[j:])
    values[:] = merged
    return count


# ---------------------------------------------------------------------------
# Hexagonal binning (pointy-top lattice, axial coordinates)

def hexbin(points, bin_width: float) -> list[tuple[float, float, int]]:
    """Assign points to hexagon cells and return (center_x, center_y, count)."""
    if bin_width <= 0:
        raise DataError("bin_width must be positive")
    size = bin_width / math.sqrt(3.0)
    counts: dict[tuple[int, int], int] = {}
    for x, y in points:
        q = (math.sqrt(3.0) / 3.0 * x - y / 3.0) / size
        r = (2.0 / 3.0 * y) / size
        qi, ri = _axial_round(q, r)
        counts[(qi, ri)] = counts.get((qi, ri), 0) + 1
    rows = []
    for (qi, ri), count in counts.items():
        cx = size * math.sqrt(3.0) * (qi + ri / 2.0)
        cy = size * 1.5 * ri
        rows.append((cx, cy, count))
    rows.sort(key=lambda row: (row[0], row[1]))
    return rows


def _axial_round(q: float, r: float) -> tuple[int, int]:
    # Round in cube coordinates, then repair the axis with the worst error.
    x, z = q, r
    y = -x - z
    rx, ry, rz = round(x), round(y), round(z)
    dx, dy, dz = abs(rx - x), abs(ry - y), abs(rz - z)
    if dx > dy and dx > dz:
        rx = -ry - rz
    elif dy > dz:
        pass  # y is derived; nothing to fix on the axial pair
    else:
        rz = -rx - ry
    return int(rx), int(rz)


def invited_vs_unresponded(labels: list[ParticipationLabel], bin_width: float = 1.0,
                           ) -> tuple[dict, list[tuple[float, float, int]]]:
    """Relate invite-list size to silence across changes."""
    summary = unresponded_summary(labels)
    if summary.changes < 2:
        raise DataError("invited_vs_unresponded requires at least 2 changes")
    invited = [c.invited for c in summary.per_change]
    silent = [c.unresponded for c in summary.per_change]
    tau, magnitude = kendall_tau_b(invited, silent)
    report = {"tau": tau, "magnitude": magnitude, "changes": summary.changes}
    cells = hexbin(zip(invited, silent), bin_width)
    return report, cells


# ---------------------------------------------------------------------------
# Lifetime responsiveness and organizational mix

def participation_rate_distribution(index, as_of) -> dict:
    """Lifetime response rate per reviewer with ever >= 1 invitation."""
    counts = index.lifetime_participation(as_of)
    rates = {reviewer: responded / received
             for reviewer, (received, responded) in counts.items()}
    if not rates:
        return {"reviewers": 0, "rates": {}, "median": 0.0, "q1": 0.0, "q3": 0.0}
    values = np.array(sorted(rates.values()))
    q1, median, q3 = (float(v) for v in np.percentile(values, [25.0, 50.0, 75.0]))
    return {"reviewers": len(rates), "rates": rates,
            "median": median, "q1": q1, "q3": q3}


def org_diversity(accounts) -> list[tuple[str, int, float]]:
    """Developer counts per email domain; accounts without one are unknown."""
    counts: dict[str, int] = {}
    total = 0
    for account in accounts:
        email = account.email or ""
        domain = email.split("@", 1)[1].strip().lower() if "@" in email else ""
        counts[domain or "unknown"] = counts.get(domain or "unknown", 0) + 1
        total += 1
    rows = [(org, count, count / total) for org, count in counts.items()]
    rows.sort(key=lambda row: (-row[1], row[0]))
    return rows


# ---------------------------------------------------------------------------
# Artifacts

def save_rq1_summary(summary: UnrespondedSummary, tau_report: dict,
                     rates: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = summary.as_dict()
    doc["kendall"] = tau_report
    doc["participation_rate"] = {k: rates[k] for k in ("reviewers", "median", "q1", "q3")}
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def save_violin(summary: UnrespondedSummary, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["change_id", "invited", "unresponded", "proportion"])
        for entry in summary.per_change:
            writer.writerow([entry.change_id, entry.invited, entry.unresponded,
                             "%.9g" % entry.proportion])


def save_hexbin(cells: list[tuple[float, float, int]], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cx", "cy", "count"])
        for cx, cy, count in cells:
            writer.writerow(["%.9g" % cx, "%.9g" % cy, count])


def save_org(rows: list[tuple[str, int, float]], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["organization", "developers", "proportion"])
        for org, count, share in rows:
            writer.writerow([org, count, "%.9g" % share])
