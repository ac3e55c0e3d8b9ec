import math
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logward.features import (
    DEFAULT_EMBED_DIM,
    EncoderState,
    ImportanceMap,
    PretrainedTable,
    SchemaError,
    WeightDictionary,
    build_event_graph,
    build_feature_matrix,
    build_weight_dictionary,
    embed_token,
    normalize_parameter,
    select_columns,
    train_importance,
)
from logward.parsing import ParsedEvent


def make_event(i, event_id=1, context="ctx", level="INFO", params=(), label=None):
    return ParsedEvent(
        line_id=i,
        datetime=None,
        context=context,
        level=level,
        record_id=None,
        event_id=event_id,
        event_template=f"tpl{event_id}",
        parameter_list=list(params),
        label=label,
    )


def _entropy(labels):
    n = len(labels)
    return -sum((c / n) * math.log2(c / n) for c in Counter(labels).values())


def _info_gain(values, labels):
    base = _entropy(labels)
    n = len(labels)
    conditional = 0.0
    for v in set(values):
        subset = [labels[i] for i, x in enumerate(values) if x == v]
        conditional += len(subset) / n * _entropy(subset)
    return base - conditional


class TestTrainImportance:
    def _labeled_events(self, n=400, seed=5):
        rng = random.Random(seed)
        events = []
        for i in range(n):
            y = rng.randint(0, 1)
            events.append(
                make_event(
                    i,
                    event_id=rng.randint(1, 6),
                    context="constant",
                    level="ERROR" if y else "INFO",
                    params=[f"p{rng.randint(0, 3)}"],
                    label=y,
                )
            )
        return events

    def test_perfectly_informative_column_dominates(self):
        imap = train_importance(self._labeled_events())
        assert max(imap.importances, key=imap.importances.get) == "level"

    def test_constant_column_has_zero_importance(self):
        imap = train_importance(self._labeled_events())
        assert imap.importances["context"] == 0.0

    def test_sums_to_one(self):
        imap = train_importance(self._labeled_events())
        assert math.isclose(sum(imap.importances.values()), 1.0, abs_tol=1e-6)
        assert all(v >= 0 for v in imap.importances.values())

    def test_row_shuffle_invariance(self):
        events = self._labeled_events()
        shuffled = events[:]
        random.Random(99).shuffle(shuffled)
        assert train_importance(events).importances == train_importance(shuffled).importances

    def test_single_class_errors(self):
        events = [make_event(i, label=0) for i in range(20)]
        with pytest.raises(ValueError, match="importance undefined"):
            train_importance(events)

    def test_ranking_matches_info_gain_oracle(self):
        # event_id correlates with the label, context does not
        rng = random.Random(11)
        events = []
        for i in range(600):
            y = rng.randint(0, 1)
            a = y if rng.random() < 0.9 else 1 - y
            events.append(
                make_event(i, event_id=a, context=f"c{rng.randint(0, 3)}", label=y)
            )
        labels = [e.label for e in events]
        gain_a = _info_gain([e.event_id for e in events], labels)
        gain_b = _info_gain([e.context for e in events], labels)
        assert gain_a > gain_b
        imap = train_importance(events, columns=("event_id", "context"))
        assert imap.importances["event_id"] > imap.importances["context"]


class TestSelectColumns:
    def _imap(self):
        return ImportanceMap({"a": 0.6, "b": 0.3, "c": 0.1})

    def test_filters_strictly_above_tau(self):
        assert select_columns(self._imap(), 0.2) == ["a", "b"]

    def test_tau_zero_keeps_positive_columns(self):
        imap = ImportanceMap({"a": 0.7, "b": 0.3, "c": 0.0})
        assert select_columns(imap, 0.0) == ["a", "b"]

    def test_empty_selection_errors(self):
        with pytest.raises(ValueError, match="threshold too high"):
            select_columns(self._imap(), 0.6)

    def test_boundary_is_strict(self):
        assert select_columns(self._imap(), 0.3) == ["a"]

    def test_invalid_tau(self):
        with pytest.raises(ValueError):
            select_columns(self._imap(), 1.0)

    @given(
        st.lists(st.floats(min_value=0.001, max_value=1.0), min_size=2, max_size=6),
        st.floats(min_value=0.0, max_value=0.5),
        st.floats(min_value=0.0, max_value=0.5),
    )
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_tau(self, raw, tau1, tau2):
        total = sum(raw)
        imap = ImportanceMap({f"c{i}": v / total for i, v in enumerate(raw)})
        lo, hi = sorted((tau1, tau2))
        try:
            upper = set(select_columns(imap, hi))
        except ValueError:
            return  # empty at the higher threshold, nothing to compare
        assert upper <= set(select_columns(imap, lo))

    def test_weight_dictionary_keeps_importances(self):
        w = build_weight_dictionary(self._imap(), 0.2)
        assert w.weights == {"a": 0.6, "b": 0.3}
        assert all(v > w.threshold for v in w.weights.values())
        assert WeightDictionary.from_dict(w.to_dict()).weights == w.weights


class TestEncoder:
    def _events(self):
        return [
            make_event(1, event_id=4, level="INFO"),
            make_event(2, event_id=2, level="WARN"),
            make_event(3, event_id=4, level="ERROR"),
        ]

    def test_codes_are_sorted_categories_from_one(self):
        enc = EncoderState.fit(self._events(), ["event_id", "level"])
        # sorted: ERROR=1, INFO=2, WARN=3
        assert enc.categories["level"] == {"ERROR": 1, "INFO": 2, "WARN": 3}
        x = build_feature_matrix([make_event(9, event_id=4, level="INFO")], enc)
        assert x.tolist() == [[2.0, 2.0]]

    def test_identical_events_identical_rows(self):
        enc = EncoderState.fit(self._events(), ["event_id", "level"])
        x = build_feature_matrix([self._events()[0], self._events()[0]], enc)
        assert np.array_equal(x[0], x[1])

    def test_unseen_category_maps_to_reserved_zero(self):
        enc = EncoderState.fit(self._events(), ["event_id", "level"])
        x = build_feature_matrix([make_event(9, event_id=77, level="TRACE")], enc)
        assert x.tolist() == [[0.0, 0.0]]

    def test_missing_column_is_schema_error(self):
        with pytest.raises(SchemaError):
            EncoderState.fit(self._events(), ["event_id", "nonexistent"])

    def test_rows_are_pointwise(self):
        enc = EncoderState.fit(self._events(), ["event_id", "level"])
        batch = build_feature_matrix(self._events(), enc)
        for i, event in enumerate(self._events()):
            single = build_feature_matrix([event], enc)
            assert np.array_equal(single[0], batch[i])

    def test_serialization_roundtrip(self):
        enc = EncoderState.fit(self._events(), ["event_id", "level"])
        clone = EncoderState.from_dict(enc.to_dict())
        assert clone.columns == enc.columns
        assert clone.categories == enc.categories

    def test_parameter_column_never_encoded(self):
        enc = EncoderState.fit(self._events(), ["event_id", "parameter_list", "level"])
        assert enc.columns == ["event_id", "level"]


class TestNormalizeParameter:
    def test_path_keeps_last_two_segments(self):
        assert normalize_parameter("/home/alice/data/logs/x.txt") == "logs/x.txt"

    def test_block_id_dropped(self):
        assert normalize_parameter("blk_-5627") is None
        assert normalize_parameter("blk_903421") is None

    def test_passthrough(self):
        assert normalize_parameter("ciod") == "ciod"

    def test_short_path_unchanged(self):
        assert normalize_parameter("a/b") == "a/b"

    def test_single_segment_path(self):
        assert normalize_parameter("/10.0.0.1:5000") == "10.0.0.1:5000"


class TestEventGraph:
    def test_star_topology(self):
        g = build_event_graph(make_event(1, event_id=7, params=["p1", "p2"]))
        assert g.nodes == ["7", "p1", "p2"]
        assert g.edges == [(0, 1), (0, 2)]
        assert g.node_features.shape == (3, DEFAULT_EMBED_DIM)

    def test_empty_params_single_node(self):
        g = build_event_graph(make_event(1, event_id=7, params=[]))
        assert g.n_nodes == 1
        assert g.edges == []

    def test_duplicate_params_keep_separate_leaves(self):
        g = build_event_graph(make_event(1, event_id=7, params=["a", "a"]))
        assert g.nodes == ["7", "a", "a"]
        assert np.array_equal(g.node_features[1], g.node_features[2])

    def test_dropped_params_shrink_graph(self):
        g = build_event_graph(make_event(1, event_id=7, params=["blk_-5627", "x"]))
        assert g.nodes == ["7", "x"]
        assert len(g.edges) == g.n_nodes - 1


class TestEmbedToken:
    def test_deterministic(self):
        assert np.array_equal(embed_token("hello"), embed_token("hello"))

    def test_dimension(self):
        assert embed_token("anything", d=17).shape == (17,)

    def test_empty_string_zero_vector(self):
        assert not embed_token("").any()

    @given(st.text(max_size=20))
    @settings(max_examples=80, deadline=None)
    def test_norm_bounded(self, token):
        assert np.linalg.norm(embed_token(token)) <= 1.0 + 1e-12

    def test_pretrained_table(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("hello 1.0 0.0 0.0\nworld 0.0 1.0 0.0\n")
        table = PretrainedTable.load(str(path))
        assert table.d == 3
        assert embed_token("hello", d=3, table=table).tolist() == [1.0, 0.0, 0.0]
        # unknown tokens fall back to hashing
        fallback = embed_token("unknown", d=3, table=table)
        assert fallback.shape == (3,)

    def test_pretrained_dimension_mismatch(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("hello 1.0 0.0 0.0\n")
        table = PretrainedTable.load(str(path))
        with pytest.raises(ValueError):
            embed_token("hello", d=50, table=table)

    def test_ragged_vector_file_rejected(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("hello 1.0 0.0\nworld 1.0\n")
        with pytest.raises(ValueError):
            PretrainedTable.load(str(path))
