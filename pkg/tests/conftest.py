"""Shared fixtures: a hand-audited golden dataset and the synthetic corpus.

The golden dataset is small enough that every metric value below was derived
on paper from the pinned temporal semantics (events strictly before t, a
person's own changes never count as reviewer-side history). Tests freeze
those hand results as oracles; they were NOT copied from program output.
"""

from __future__ import annotations

from datetime import datetime, timezone

import numpy as np
import pytest

from revsignal.fixture import generate_fixture
from revsignal.ingest import save_dataset
from revsignal.records import (
    AccountRef,
    ChangeRecord,
    ChangeStatus,
    Dataset,
    FileChange,
    MessageRecord,
    RevisionRecord,
    VoteRecord,
)


def dt(month: int, day: int, hour: int = 12, year: int = 2020) -> datetime:
    return datetime(year, month, day, hour, tzinfo=timezone.utc)


GOLDEN_BOTS = {"cibot"}


def golden_dataset() -> Dataset:
    """Four changes, five accounts, every metric checkable on paper.

    Timeline (all 2020, noon UTC unless noted):
      c0 gadgets  01-01 .. 01-05 MERGED    owner alice, invites bob;
                  bob votes +2 and comments on 01-02.
      c1 widgets  02-01 .. 02-10 MERGED    owner alice, invites bob+carol;
                  bob votes +1 and comments on 02-03, carol silent.
      c2 widgets  03-01 .. 04-15 MERGED    owner dave, invites bob+carol;
                  bob comments 03-02, carol votes -1 on 03-05.
      c3 widgets  04-01 .. 04-20 ABANDONED owner alice, invites
                  bob+carol+dave+cibot; bob votes +1 (04-02), dave comments
                  (04-04), carol only casts a bare 0 vote (04-05), cibot
                  posts CI chatter. Second revision on 04-10.
    """
    accounts = {
        "alice": AccountRef("alice", "Alice", "alice@red.example"),
        "bob": AccountRef("bob", "Bob", "bob@red.example"),
        "carol": AccountRef("carol", "Carol", "carol@blue.example"),
        "dave": AccountRef("dave", "Dave", ""),
        "cibot": AccountRef("cibot", "CI Bot", "ci@red.example", is_bot=True),
    }
    c0 = ChangeRecord(
        change_id="c0", project="gadgets",
        created_at=dt(1, 1), closed_at=dt(1, 5), status=ChangeStatus.MERGED,
        owner="alice", subject="add gadget lib", description="add gadget lib",
        invited_reviewers=frozenset({"bob"}),
        messages=(MessageRecord("bob", dt(1, 2, 13), "looks fine"),),
        votes=(VoteRecord("bob", "Code-Review", 2, dt(1, 2)),),
        revisions=(RevisionRecord(1, dt(1, 1), (FileChange("lib/a.c", 10, 2),)),),
    )
    c1 = ChangeRecord(
        change_id="c1", project="widgets",
        created_at=dt(2, 1), closed_at=dt(2, 10), status=ChangeStatus.MERGED,
        owner="alice", subject="rework core x", description="rework core x",
        invited_reviewers=frozenset({"bob", "carol"}),
        messages=(MessageRecord("bob", dt(2, 3, 13), "one nit inline"),),
        votes=(VoteRecord("bob", "Code-Review", 1, dt(2, 3)),),
        revisions=(RevisionRecord(1, dt(2, 1), (
            FileChange("src/core/x.c", 5, 5),
            FileChange("src/util/y.c", 3, 0),
        )),),
    )
    c2 = ChangeRecord(
        change_id="c2", project="widgets",
        created_at=dt(3, 1), closed_at=dt(4, 15), status=ChangeStatus.MERGED,
        owner="dave", subject="tune core z", description="tune core z",
        invited_reviewers=frozenset({"bob", "carol"}),
        messages=(MessageRecord("bob", dt(3, 2), "needs a test"),),
        votes=(VoteRecord("carol", "Code-Review", -1, dt(3, 5)),),
        revisions=(RevisionRecord(1, dt(3, 1), (FileChange("src/core/z.c", 7, 1),)),),
    )
    c3 = ChangeRecord(
        change_id="c3", project="widgets",
        created_at=dt(4, 1), closed_at=dt(4, 20), status=ChangeStatus.ABANDONED,
        owner="alice", subject="doc pass for core x",
        description="doc pass for core x",
        invited_reviewers=frozenset({"bob", "carol", "dave", "cibot"}),
        messages=(
            MessageRecord("cibot", dt(4, 1, 13), "Build Started"),
            MessageRecord("cibot", dt(4, 2, 1), "Build Failed"),
            MessageRecord("dave", dt(4, 4), "abandon this?"),
        ),
        votes=(
            VoteRecord("bob", "Code-Review", 1, dt(4, 2)),
            VoteRecord("carol", "Code-Review", 0, dt(4, 5)),
        ),
        revisions=(
            RevisionRecord(1, dt(4, 1), (
                FileChange("src/core/x.c", 2, 2),
                FileChange("docs/readme.md", 1, 0),
            )),
            RevisionRecord(2, dt(4, 10), (
                FileChange("src/core/x.c", 3, 3),
                FileChange("docs/readme.md", 2, 0),
            )),
        ),
    )
    return Dataset(changes=(c0, c1, c2, c3), accounts=accounts)


# Hand-derived metric values, keyed by (change_id, reviewer). Field order is
# the canonical metric order plus the outcome. Worked examples:
#   (c3, bob):  c2 is still open on 04-01 and bob commented there on 03-02, so
#     concurrent=1; bob responded on both alice-owned c0 and c1 -> familiarity
#     2; widgets message history is one message each on c1 and c2 -> median 1;
#     widgets invites c1+c2 both answered -> rate 1.0; global invites c0..c2
#     -> 3; +2 vote on 01-02 -> core; reviewing experience over modules
#     {src/core, docs}: src/core had c1 (sole participant -> 1) and c2 (two
#     participants -> 1/2), so (1 + 1/2)/2 prior patches = 0.75, docs has no
#     history, average over 2 modules -> 0.375.
#   (c3, dave): his own c2 never counts as reviewer-side history, so all
#     reviewer metrics are 0; he authored 1 of 2 prior src/core patches ->
#     authoring (1/2)/2 = 0.25.
GOLDEN_EXPECTED = {
    ("c0", "bob"): dict(
        concurrent_reviews=0, remaining_reviews=0, familiarity=0,
        median_comments=0.0, participation_rate=0.0, received_invitations=0,
        core_member=False, reviewer_authoring_exp=0.0,
        reviewer_reviewing_exp=0.0, patch_size=12,
        author_authoring_exp=0.0, author_reviewing_exp=0.0, outcome=True),
    ("c1", "bob"): dict(
        concurrent_reviews=0, remaining_reviews=0, familiarity=1,
        median_comments=0.0, participation_rate=0.0, received_invitations=1,
        core_member=True, reviewer_authoring_exp=0.0,
        reviewer_reviewing_exp=0.0, patch_size=13,
        author_authoring_exp=0.0, author_reviewing_exp=0.0, outcome=True),
    ("c1", "carol"): dict(
        concurrent_reviews=0, remaining_reviews=0, familiarity=0,
        median_comments=0.0, participation_rate=0.0, received_invitations=0,
        core_member=False, reviewer_authoring_exp=0.0,
        reviewer_reviewing_exp=0.0, patch_size=13,
        author_authoring_exp=0.0, author_reviewing_exp=0.0, outcome=False),
    ("c2", "bob"): dict(
        concurrent_reviews=0, remaining_reviews=0, familiarity=0,
        median_comments=1.0, participation_rate=1.0, received_invitations=2,
        core_member=True, reviewer_authoring_exp=0.0,
        reviewer_reviewing_exp=1.0, patch_size=8,
        author_authoring_exp=0.0, author_reviewing_exp=0.0, outcome=True),
    ("c2", "carol"): dict(
        concurrent_reviews=0, remaining_reviews=0, familiarity=0,
        median_comments=0.0, participation_rate=0.0, received_invitations=1,
        core_member=False, reviewer_authoring_exp=0.0,
        reviewer_reviewing_exp=0.0, patch_size=8,
        author_authoring_exp=0.0, author_reviewing_exp=0.0, outcome=True),
    ("c3", "bob"): dict(
        concurrent_reviews=1, remaining_reviews=0, familiarity=2,
        median_comments=1.0, participation_rate=1.0, received_invitations=3,
        core_member=True, reviewer_authoring_exp=0.0,
        reviewer_reviewing_exp=0.375, patch_size=5,
        author_authoring_exp=0.25, author_reviewing_exp=0.0, outcome=True),
    ("c3", "carol"): dict(
        concurrent_reviews=1, remaining_reviews=0, familiarity=0,
        median_comments=0.0, participation_rate=0.5, received_invitations=2,
        core_member=False, reviewer_authoring_exp=0.0,
        reviewer_reviewing_exp=0.125, patch_size=5,
        author_authoring_exp=0.25, author_reviewing_exp=0.0, outcome=False),
    ("c3", "dave"): dict(
        concurrent_reviews=0, remaining_reviews=0, familiarity=0,
        median_comments=0.0, participation_rate=0.0, received_invitations=0,
        core_member=False, reviewer_authoring_exp=0.25,
        reviewer_reviewing_exp=0.0, patch_size=5,
        author_authoring_exp=0.25, author_reviewing_exp=0.0, outcome=True),
}


@pytest.fixture()
def golden() -> Dataset:
    return golden_dataset()


@pytest.fixture(scope="session")
def corpus():
    """The bundled 200-change synthetic dataset plus its planted audit."""
    return generate_fixture()


@pytest.fixture(scope="session")
def corpus_path(corpus, tmp_path_factory):
    dataset, _ = corpus
    path = tmp_path_factory.mktemp("corpus") / "dataset.jsonl"
    save_dataset(dataset, path)
    return path


def synthetic_logistic(seed: int, n: int, betas, intercept: float = 0.0):
    """Draw (X, y) from a known logistic model for fit/evaluate oracles."""
    rng = np.random.default_rng(seed)
    betas = np.asarray(betas, dtype=float)
    X = rng.normal(size=(n, betas.size))
    eta = intercept + X @ betas
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    return X, y
