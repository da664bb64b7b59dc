"""Domain record validation, timestamp handling, and interchange round trips."""

from datetime import datetime, timezone

import pytest

from revsignal.errors import DataError
from revsignal.records import (
    AccountRef,
    ChangeRecord,
    ChangeStatus,
    FileChange,
    MessageRecord,
    RevisionRecord,
    VoteRecord,
    change_from_json,
    change_to_json,
    format_instant,
    modules_of,
    parse_instant,
    subsystem_of,
)
from tests.conftest import dt, golden_dataset


class TestInstants:
    def test_z_suffix_parses_as_utc(self):
        ts = parse_instant("2020-04-01T12:00:00Z")
        assert ts == datetime(2020, 4, 1, 12, tzinfo=timezone.utc)

    def test_naive_input_assumed_utc(self):
        assert parse_instant("2020-04-01T12:00:00").tzinfo == timezone.utc

    def test_offset_normalized_to_utc(self):
        ts = parse_instant("2020-04-01T14:30:00+02:30")
        assert ts == datetime(2020, 4, 1, 12, tzinfo=timezone.utc)

    def test_round_trip_is_stable(self):
        text = "2020-04-01T12:00:00Z"
        assert format_instant(parse_instant(text)) == text

    def test_garbage_rejected(self):
        with pytest.raises(DataError):
            parse_instant("not a time")


class TestRecordValidation:
    def test_empty_account_id_rejected(self):
        with pytest.raises(DataError):
            AccountRef("")

    @pytest.mark.parametrize("value", [-3, 3, 5])
    def test_vote_range_enforced(self, value):
        with pytest.raises(DataError):
            VoteRecord("bob", "Code-Review", value, dt(1, 1))

    def test_negative_churn_rejected(self):
        with pytest.raises(DataError):
            FileChange("a.c", -1, 0)

    def test_revision_numbers_start_at_one(self):
        with pytest.raises(DataError):
            RevisionRecord(0, dt(1, 1), ())

    def _change(self, **overrides):
        kwargs = dict(
            change_id="c", project="p", created_at=dt(1, 1), closed_at=dt(1, 2),
            status=ChangeStatus.MERGED, owner="alice",
            revisions=(RevisionRecord(1, dt(1, 1), ()),),
        )
        kwargs.update(overrides)
        return ChangeRecord(**kwargs)

    def test_valid_change_accepted(self):
        assert self._change().change_id == "c"

    def test_revisions_required(self):
        with pytest.raises(DataError):
            self._change(revisions=())

    def test_revision_numbers_must_increase_from_one(self):
        revs = (RevisionRecord(2, dt(1, 1), ()), RevisionRecord(3, dt(1, 2), ()))
        with pytest.raises(DataError):
            self._change(revisions=revs)
        revs = (RevisionRecord(1, dt(1, 1), ()), RevisionRecord(1, dt(1, 2), ()))
        with pytest.raises(DataError):
            self._change(revisions=revs)

    def test_closed_change_needs_closed_at(self):
        with pytest.raises(DataError):
            self._change(closed_at=None)

    def test_closed_before_created_rejected(self):
        with pytest.raises(DataError):
            self._change(closed_at=dt(1, 1, 11))

    def test_open_change_may_lack_closed_at(self):
        change = self._change(status=ChangeStatus.OPEN, closed_at=None)
        assert change.closed_at is None


class TestGrouping:
    def _change(self, paths):
        files = tuple(FileChange(p, 1, 0) for p in paths)
        return ChangeRecord(
            change_id="c", project="proj", created_at=dt(1, 1), closed_at=dt(1, 2),
            status=ChangeStatus.MERGED, owner="alice",
            revisions=(RevisionRecord(1, dt(1, 1), files),),
        )

    def test_project_rule_uses_project_name(self):
        assert subsystem_of(self._change(["src/a.c"]), "project") == "proj"

    def test_top_dir_rule(self):
        assert subsystem_of(self._change(["src/a.c", "src/deep/b.c"]), "top_dir") == "src"

    def test_top_dir_disagreement_is_mixed(self):
        assert subsystem_of(self._change(["src/a.c", "docs/b.md"]), "top_dir") == "mixed"
        assert subsystem_of(self._change([]), "top_dir") == "mixed"

    def test_top_dir_root_file_is_dot(self):
        assert subsystem_of(self._change(["README.md"]), "top_dir") == "."

    def test_unknown_rule_rejected(self):
        with pytest.raises(DataError):
            subsystem_of(self._change(["a"]), "bogus")

    def test_modules_are_first_revision_directories(self):
        change = self._change(["src/core/x.c", "src/core/y.c", "README.md"])
        assert modules_of(change) == frozenset({"src/core", "."})


class TestInterchange:
    def test_round_trip_preserves_everything(self):
        dataset = golden_dataset()
        original = dataset.changes[3]  # richest change: votes, messages, 2 revisions
        doc = change_to_json(original, dataset.accounts)
        rebuilt, accounts = change_from_json(doc)
        assert rebuilt == original
        assert {a.account_id for a in accounts} == {
            "alice", "bob", "carol", "dave", "cibot"}

    def test_missing_required_key_rejected(self):
        dataset = golden_dataset()
        doc = change_to_json(dataset.changes[0], dataset.accounts)
        del doc["created"]
        with pytest.raises(DataError, match="missing created"):
            change_from_json(doc)

    def test_unsupported_status_rejected(self):
        dataset = golden_dataset()
        doc = change_to_json(dataset.changes[0], dataset.accounts)
        doc["status"] = "DRAFT"
        with pytest.raises(DataError, match="unsupported status"):
            change_from_json(doc)

    def test_open_change_round_trips_null_close(self):
        change = ChangeRecord(
            change_id="c", project="p", created_at=dt(1, 1), closed_at=None,
            status=ChangeStatus.OPEN, owner="alice",
            revisions=(RevisionRecord(1, dt(1, 1), ()),),
        )
        doc = change_to_json(change, {})
        assert doc["closed"] is None
        rebuilt, _ = change_from_json(doc)
        assert rebuilt == change

    def test_dataset_account_lookup(self):
        dataset = golden_dataset()
        assert dataset.account("bob").display_name == "Bob"
        with pytest.raises(DataError):
            dataset.account("nobody")
