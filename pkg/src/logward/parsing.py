"""Online log template mining with a fixed-depth token tree.

Raw log lines are grouped into templates: token sequences where dynamic
positions are replaced by the wildcard ``<*>``. Lookup walks a shallow tree
(first level keyed by token count, next levels by leading tokens), so the
cost per line is bounded by the tree depth regardless of how many templates
exist. At a leaf, candidates are scored by the fraction of token positions
that match (a stored wildcard matches anything); a score strictly above the
similarity threshold joins the line to that template, otherwise a new
template is created. On a join, positions that disagree are generalized to
the wildcard.

The extracted dynamic values become the event's parameter list, aligned
with the wildcard positions of its final template.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass
from functools import lru_cache, partial
from typing import Callable, Iterable, Sequence

WILDCARD = "<*>"


class TokenLengthMismatch(ValueError):
    """Similarity is undefined for token sequences of different lengths."""


class LineParseError(ValueError):
    """Raised when a line cannot be turned into a parsed event."""


@dataclass(slots=True)
class RawLogLine:
    """One raw input line with bookkeeping fields."""

    line_id: int
    source: str
    text: str
    received_at: str | None = None
    label: int | None = None


@dataclass(slots=True)
class QuarantinedLine:
    line_id: int
    reason: str
    text: str


@dataclass(slots=True)
class ParsedEvent:
    """Structured record produced for one log line."""

    line_id: int
    datetime: str | None
    context: str | None
    level: str | None
    record_id: str | None
    event_id: int
    event_template: str
    parameter_list: list[str]
    label: int | None = None
    header_ok: bool = True

    def to_dict(self) -> dict:
        return {
            "line_id": self.line_id,
            "datetime": self.datetime,
            "context": self.context,
            "level": self.level,
            "record_id": self.record_id,
            "event_id": self.event_id,
            "event_template": self.event_template,
            "parameter_list": list(self.parameter_list),
            "label": self.label,
            "header_ok": self.header_ok,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParsedEvent":
        return cls(
            line_id=d["line_id"],
            datetime=d.get("datetime"),
            context=d.get("context"),
            level=d.get("level"),
            record_id=d.get("record_id"),
            event_id=d["event_id"],
            event_template=d["event_template"],
            parameter_list=list(d.get("parameter_list", [])),
            label=d.get("label"),
            header_ok=d.get("header_ok", True),
        )


@dataclass(frozen=True)
class LogProfile:
    """Header extraction and masking rules for one log source family.

    ``header_pattern`` must expose a ``message`` group and may expose
    ``datetime``, ``context``, ``level`` and ``record_id`` groups. The
    masking rules are applied in order to the message, each replacing its
    matches with the wildcard, before tokenization. Rules should not match
    across whitespace; if masking changes the token count, parameter
    extraction falls back to the masked tokens.
    """

    name: str
    header_pattern: str | None = None
    mask_patterns: tuple[str, ...] = ()


@lru_cache(maxsize=256)
def _compiled(pattern: str) -> re.Pattern:
    return re.compile(pattern)


PROFILES: dict[str, LogProfile] = {}


def register_profile(profile: LogProfile) -> LogProfile:
    PROFILES[profile.name] = profile
    return profile


def get_profile(name: str) -> LogProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown log profile {name!r}; known: {sorted(PROFILES)}") from None


register_profile(LogProfile(name="raw"))

register_profile(
    LogProfile(
        name="hdfs",
        header_pattern=(
            r"^(?P<datetime>\d{6} \d{6}) (?P<record_id>\d+) (?P<level>[A-Z]+) "
            r"(?P<context>[\w.$*]+): (?P<message>.*)$"
        ),
        mask_patterns=(
            r"blk_-?\d+",
            r"(/|)(\d+\.){3}\d+(:\d+)?",
            r"(?<=[^A-Za-z0-9])-?\d+(?=[^A-Za-z0-9])|(?<=[^A-Za-z0-9])-?\d+$",
        ),
    )
)

register_profile(
    LogProfile(
        name="bgl",
        header_pattern=(
            r"^(?P<record_id>\S+) (?P<epoch>\d+) (?P<date>[\d.]+) (?P<node>\S+) "
            r"(?P<datetime>[\d\-.:]+) (?P<node2>\S+) (?P<kind>\S+) (?P<context>\S+) "
            r"(?P<level>\S+) (?P<message>.*)$"
        ),
        mask_patterns=(
            r"0x[0-9a-fA-F]+",
            r"(?<=[^A-Za-z0-9])-?\d+(?=[^A-Za-z0-9])|(?<=[^A-Za-z0-9])-?\d+$",
        ),
    )
)


def preprocess(text: str, rules: Sequence[str | re.Pattern]) -> list[str]:
    """Mask dynamic fragments with the wildcard and split into tokens.

    Returns an empty list when nothing remains, which callers treat as a
    parse error for the line.
    """
    masked = text
    for rule in rules:
        pattern = _compiled(rule) if isinstance(rule, str) else rule
        masked = pattern.sub(WILDCARD, masked)
    return masked.split()


def similarity(tokens: Sequence[str], template_tokens: Sequence[str]) -> float:
    """Fraction of positions where the template token equals the incoming
    token or is the wildcard. Defined only for equal lengths."""
    m = len(template_tokens)
    if len(tokens) != m:
        raise TokenLengthMismatch(f"token count {len(tokens)} vs template {m}")
    if m == 0:
        return 1.0
    hits = 0
    for t, w in zip(template_tokens, tokens):
        if t == w or t == WILDCARD:
            hits += 1
    return hits / m


@dataclass
class LogTemplate:
    template_id: int
    tokens: tuple[str, ...]
    match_count: int = 1

    @property
    def template_str(self) -> str:
        return " ".join(self.tokens)

    def wildcard_positions(self) -> list[int]:
        return [i for i, t in enumerate(self.tokens) if t == WILDCARD]


class _Node:
    __slots__ = ("children", "template_ids")

    def __init__(self) -> None:
        self.children: dict = {}
        self.template_ids: list[int] = []


class TemplateTree:
    """Fixed-depth prefix tree over token sequences.

    The first level is keyed by token count, the following ``depth - 2``
    levels by the leading tokens. Purely numeric tokens are routed through
    the wildcard child so identifiers do not explode the tree, and a full
    node routes new tokens through the wildcard child as well, so insertion
    never fails. ``last_lookup_nodes`` records how many internal nodes the
    most recent lookup touched.
    """

    def __init__(
        self,
        depth: int = 4,
        similarity_threshold: float = 0.4,
        max_children: int = 100,
    ) -> None:
        if depth < 1:
            raise ValueError("depth must be >= 1")
        if not 0.0 < similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must be in (0, 1]")
        if max_children < 1:
            raise ValueError("max_children must be >= 1")
        self.depth = depth
        self.similarity_threshold = similarity_threshold
        self.max_children = max_children
        self.templates: dict[int, LogTemplate] = {}
        self._root = _Node()
        self._next_id = 1
        self._token_levels = max(0, depth - 2)
        self.last_lookup_nodes = 0

    # -- lookup / insertion ------------------------------------------------

    def _search_leaf(self, tokens: Sequence[str]) -> _Node | None:
        node = self._root.children.get(len(tokens))
        touched = 1
        if node is not None:
            limit = min(self._token_levels, len(tokens))
            for i in range(limit):
                tok = tokens[i]
                children = node.children
                if tok.isdigit():
                    node = children.get(WILDCARD)
                else:
                    node = children.get(tok)
                    if node is None:
                        node = children.get(WILDCARD)
                if node is None:
                    break
                touched += 1
        self.last_lookup_nodes = touched
        return node

    def _insert_leaf(self, tokens: Sequence[str]) -> _Node:
        node = self._root.children.get(len(tokens))
        if node is None:
            node = _Node()
            self._root.children[len(tokens)] = node
        limit = min(self._token_levels, len(tokens))
        for i in range(limit):
            tok = tokens[i]
            children = node.children
            if tok.isdigit():
                tok = WILDCARD
            child = children.get(tok)
            if child is None:
                # keep one slot in reserve for the overflow wildcard child
                if tok != WILDCARD and len(children) >= self.max_children - 1:
                    tok = WILDCARD
                    child = children.get(tok)
                if child is None:
                    child = _Node()
                    children[tok] = child
            node = child
        return node

    def _best_match(self, leaf: _Node, tokens: Sequence[str]) -> int | None:
        m = len(tokens)
        best_id = -1
        best_sim = -1.0
        best_wild = -1
        templates = self.templates
        for tid in leaf.template_ids:
            tt = templates[tid].tokens
            if len(tt) != m:
                continue
            same = 0
            wild = 0
            for a, b in zip(tt, tokens):
                if a == b:
                    same += 1
                elif a == WILDCARD:
                    wild += 1
            sim = (same + wild) / m if m else 1.0
            if sim > best_sim or (sim == best_sim and wild > best_wild):
                best_id, best_sim, best_wild = tid, sim, wild
        if best_id >= 0 and best_sim > self.similarity_threshold:
            return best_id
        return None

    def insert_or_match(self, tokens: Sequence[str], count: int = 1) -> tuple[int, bool]:
        """Match tokens to an existing template or create a new one.

        Returns ``(template_id, is_new)``. On a match the stored template is
        generalized at disagreeing positions and its match count grows by
        ``count``.
        """
        if not tokens:
            raise ValueError("cannot insert an empty token sequence")
        leaf = self._search_leaf(tokens)
        if leaf is not None:
            tid = self._best_match(leaf, tokens)
            if tid is not None:
                self._generalize(tid, tokens, count)
                return tid, False
        template = LogTemplate(self._next_id, tuple(tokens), match_count=count)
        self._next_id += 1
        self.templates[template.template_id] = template
        self._insert_leaf(tokens).template_ids.append(template.template_id)
        return template.template_id, True

    def _generalize(self, template_id: int, tokens: Sequence[str], count: int) -> None:
        t = self.templates[template_id]
        if t.tokens != tuple(tokens):
            merged = tuple(a if a == b else WILDCARD for a, b in zip(t.tokens, tokens))
            if merged != t.tokens:
                t.tokens = merged
        t.match_count += count

    def merge_into(self, template_id: int, tokens: Sequence[str], count: int) -> None:
        """Fold another tree's version of an existing template into this one.

        Used when combining partition trees that started from a shared base:
        the ids are already aligned, so no similarity test is involved.
        """
        self._generalize(template_id, tokens, count)

    @property
    def max_template_id(self) -> int:
        return self._next_id - 1

    # -- snapshot ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "depth": self.depth,
            "similarity_threshold": self.similarity_threshold,
            "max_children": self.max_children,
            "templates": [
                {"id": t.template_id, "tokens": list(t.tokens), "count": t.match_count}
                for t in self.templates.values()
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TemplateTree":
        tree = cls(
            depth=d["depth"],
            similarity_threshold=d["similarity_threshold"],
            max_children=d["max_children"],
        )
        for entry in d["templates"]:
            template = LogTemplate(entry["id"], tuple(entry["tokens"]), entry["count"])
            tree.templates[template.template_id] = template
            tree._insert_leaf(template.tokens).template_ids.append(template.template_id)
            tree._next_id = max(tree._next_id, template.template_id + 1)
        return tree

    def copy(self) -> "TemplateTree":
        return TemplateTree.from_dict(self.to_dict())

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path: str) -> "TemplateTree":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# -- single line parsing ---------------------------------------------------


def _split_header(line_text: str, profile: LogProfile) -> tuple[dict, str, bool]:
    if profile.header_pattern is None:
        return {}, line_text, True
    m = _compiled(profile.header_pattern).match(line_text)
    if m is None:
        return {}, line_text, False
    groups = m.groupdict()
    message = groups.get("message")
    if message is None:
        message = line_text
    return groups, message, True


def parse_line(tree: TemplateTree, line: RawLogLine, profile: LogProfile) -> ParsedEvent:
    """Parse a single line, mining the tree as a side effect.

    Raises :class:`LineParseError` when the message is empty after masking.
    Header mismatches keep the line (the whole text is template mined) but
    null the header fields and clear ``header_ok``.
    """
    header, message, header_ok = _split_header(line.text, profile)
    orig_tokens = message.split()
    masked_tokens = preprocess(message, profile.mask_patterns)
    if not masked_tokens:
        raise LineParseError("empty message after preprocessing")
    tid, _ = tree.insert_or_match(masked_tokens)
    template = tree.templates[tid]
    source_tokens = orig_tokens if len(orig_tokens) == len(masked_tokens) else masked_tokens
    params = [source_tokens[i] for i in template.wildcard_positions()]
    return ParsedEvent(
        line_id=line.line_id,
        datetime=header.get("datetime"),
        context=header.get("context"),
        level=header.get("level"),
        record_id=header.get("record_id"),
        event_id=tid,
        event_template=template.template_str,
        parameter_list=params,
        label=line.label,
        header_ok=header_ok,
    )


# -- batch parsing ---------------------------------------------------------


@dataclass
class ParseResult:
    events: list[ParsedEvent]
    tree: TemplateTree
    quarantined: list[QuarantinedLine]


@dataclass(slots=True)
class _MinedRow:
    line: RawLogLine
    header: dict
    header_ok: bool
    orig_tokens: list[str]
    masked_tokens: list[str]
    template_id: int


def _mine_lines(
    lines: Sequence[RawLogLine],
    profile: LogProfile,
    tree: TemplateTree,
) -> tuple[list, list[QuarantinedLine]]:
    """Mine lines into ``tree``; rows keep what relabeling needs later."""
    rows: list = []
    quarantined: list[QuarantinedLine] = []
    for line in lines:
        header, message, header_ok = _split_header(line.text, profile)
        orig_tokens = message.split()
        masked_tokens = preprocess(message, profile.mask_patterns)
        if not masked_tokens:
            quarantined.append(
                QuarantinedLine(line.line_id, "empty message after preprocessing", line.text)
            )
            continue
        tid, _ = tree.insert_or_match(masked_tokens)
        rows.append(_MinedRow(line, header, header_ok, orig_tokens, masked_tokens, tid))
    return rows, quarantined


def _mine_partition(
    lines: Sequence[RawLogLine],
    profile: LogProfile,
    tree_cfg: dict,
    base_tree_dict: dict | None,
) -> tuple[list, dict, list[QuarantinedLine]]:
    if base_tree_dict is not None:
        tree = TemplateTree.from_dict(base_tree_dict)
        for t in tree.templates.values():
            t.match_count = 0  # count only this partition's contribution
    else:
        tree = TemplateTree(**tree_cfg)
    rows, quarantined = _mine_lines(lines, profile, tree)
    return rows, tree.to_dict(), quarantined


def _finish_events(rows: Iterable[_MinedRow], tree: TemplateTree, id_map: dict[int, int]) -> list[ParsedEvent]:
    events = []
    positions_cache: dict[int, tuple[str, list[int]]] = {}
    for row in rows:
        tid = id_map.get(row.template_id, row.template_id)
        cached = positions_cache.get(tid)
        if cached is None:
            template = tree.templates[tid]
            cached = (template.template_str, template.wildcard_positions())
            positions_cache[tid] = cached
        template_str, positions = cached
        source = (
            row.orig_tokens
            if len(row.orig_tokens) == len(row.masked_tokens)
            else row.masked_tokens
        )
        events.append(
            ParsedEvent(
                line_id=row.line.line_id,
                datetime=row.header.get("datetime"),
                context=row.header.get("context"),
                level=row.header.get("level"),
                record_id=row.header.get("record_id"),
                event_id=tid,
                event_template=template_str,
                parameter_list=[source[i] for i in positions],
                label=row.line.label,
                header_ok=row.header_ok,
            )
        )
    return events


def parse_batch(
    lines: Sequence[RawLogLine],
    profile: LogProfile | str = "raw",
    partitions: int = 1,
    depth: int = 4,
    similarity_threshold: float = 0.4,
    max_children: int = 100,
    base_tree: TemplateTree | None = None,
    mapper: Callable | None = None,
) -> ParseResult:
    """Parse a batch of lines, optionally across parallel partitions.

    Partitions are mined independently and merged by folding each
    partition's templates back into a single tree (base templates by id,
    new templates through regular matching), after which every event is
    relabeled against the merged tree. Output order equals input order for
    events and quarantined lines alike.

    ``base_tree`` seeds mining with existing templates (it is copied, never
    mutated), so repeated parsing against a frozen snapshot is stable.
    """
    if partitions < 1:
        raise ValueError("partitions must be >= 1")
    if isinstance(profile, str):
        profile = get_profile(profile)
    tree_cfg = {
        "depth": depth,
        "similarity_threshold": similarity_threshold,
        "max_children": max_children,
    }
    if base_tree is not None:
        tree_cfg = {
            "depth": base_tree.depth,
            "similarity_threshold": base_tree.similarity_threshold,
            "max_children": base_tree.max_children,
        }
    base_dict = base_tree.to_dict() if base_tree is not None else None
    base_max_id = base_tree.max_template_id if base_tree is not None else 0

    if partitions == 1 or len(lines) == 0:
        merged = base_tree.copy() if base_tree is not None else TemplateTree(**tree_cfg)
        rows, quarantined = _mine_lines(lines, profile, merged)
        events = _finish_events(rows, merged, {})
        return ParseResult(events=events, tree=merged, quarantined=quarantined)

    if mapper is None:
        from .orchestrator.partitions import map_partitions

        mapper = map_partitions

    worker = partial(_mine_partition, profile=profile, tree_cfg=tree_cfg, base_tree_dict=base_dict)
    results = mapper(list(lines), worker, partitions=partitions, backend="process")

    merged = base_tree.copy() if base_tree is not None else TemplateTree(**tree_cfg)
    all_rows: list[tuple[list, dict[int, int]]] = []
    quarantined: list[QuarantinedLine] = []
    for rows, tree_dict, part_quarantine in results:
        part_tree = TemplateTree.from_dict(tree_dict)
        id_map: dict[int, int] = {}
        for tid in sorted(part_tree.templates):
            t = part_tree.templates[tid]
            if tid <= base_max_id:
                merged.merge_into(tid, t.tokens, t.match_count)
            else:
                new_id, _ = merged.insert_or_match(t.tokens, count=t.match_count)
                id_map[tid] = new_id
        all_rows.append((rows, id_map))
        quarantined.extend(part_quarantine)

    events: list[ParsedEvent] = []
    for rows, id_map in all_rows:
        events.extend(_finish_events(rows, merged, id_map))
    return ParseResult(events=events, tree=merged, quarantined=quarantined)


# -- I/O helpers -------------------------------------------------------------

CSV_COLUMNS = [
    "LineId",
    "Datetime",
    "Context",
    "Level",
    "RecordId",
    "EventId",
    "EventTemplate",
    "ParameterList",
]


def read_jsonl_lines(stream: Iterable[str]) -> tuple[list[RawLogLine], list[QuarantinedLine]]:
    """Read raw input records from JSON lines text.

    Malformed records are quarantined with a reason, never dropped. Missing
    ``line_id`` values are assigned from a per-batch sequence.
    """
    lines: list[RawLogLine] = []
    quarantined: list[QuarantinedLine] = []
    seen_ids: set[int] = set()
    next_auto = 1
    for number, raw in enumerate(stream, start=1):
        text = raw.strip()
        if not text:
            quarantined.append(QuarantinedLine(number, "empty line", raw))
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            quarantined.append(QuarantinedLine(number, f"invalid json: {exc.msg}", raw))
            continue
        if not isinstance(obj, dict):
            quarantined.append(QuarantinedLine(number, "not a json object", raw))
            continue
        body = obj.get("text")
        if not isinstance(body, str) or not body.strip():
            quarantined.append(QuarantinedLine(number, "missing or empty text", raw))
            continue
        line_id = obj.get("line_id")
        if line_id is None:
            while next_auto in seen_ids:
                next_auto += 1
            line_id = next_auto
        elif not isinstance(line_id, int) or line_id <= 0:
            quarantined.append(QuarantinedLine(number, "line_id must be a positive integer", raw))
            continue
        elif line_id in seen_ids:
            quarantined.append(QuarantinedLine(number, f"duplicate line_id {line_id}", raw))
            continue
        seen_ids.add(line_id)
        label = obj.get("label")
        if label is not None and label not in (0, 1):
            quarantined.append(QuarantinedLine(number, "label must be 0 or 1", raw))
            continue
        lines.append(
            RawLogLine(
                line_id=line_id,
                source=str(obj.get("source", "unknown")),
                text=body,
                received_at=obj.get("received_at"),
                label=label,
            )
        )
    return lines, quarantined


def events_to_jsonl(events: Iterable[ParsedEvent]) -> str:
    return "".join(json.dumps(e.to_dict()) + "\n" for e in events)


def events_to_csv(events: Iterable[ParsedEvent]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_COLUMNS)
    for e in events:
        writer.writerow(
            [
                e.line_id,
                e.datetime or "",
                e.context or "",
                e.level or "",
                e.record_id or "",
                e.event_id,
                e.event_template,
                json.dumps(e.parameter_list),
            ]
        )
    return buf.getvalue()
