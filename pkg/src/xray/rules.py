"""Rule definitions: built-in ids, user rule files, and expectation rules.

Two rule kinds exist. ``select`` rules pick a node subset for pruning:
a match over node kind / name / command opcode plus a closure operator
(``subtree`` selects the whole syscall subtree owning each match,
``ancestors`` adds the path from each match up to its syscall root, and
``between`` selects the syscall, the matches, and every kernel node whose
interval lies between the syscall start and the last match). ``expect``
rules assert a relation: when a syscall in the trigger set appears, a
required command name set or kernel function must (or must not) appear
in its subtree.

The built-in selection rules rule1/rule2/rule3 are implemented natively
by the explorer and cannot be redefined by rule files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

from .model import NodeKind, XrayError


class RuleError(XrayError):
    pass


WRITE_FAMILY = frozenset({"WRITE_10", "WRITE_16", "WRITE"})
FLUSH_COMMANDS = frozenset({"SYNCHRONIZE_CACHE", "FLUSH"})
SYNC_SYSCALLS = frozenset({"sync", "fsync", "fdatasync", "syncfs", "msync"})

BUILTIN_SELECT_IDS = ("rule1", "rule2", "rule3")
BUILTIN_EXPECT_IDS = ("sync-flush", "blkdev-fsync", "fdatasync-journal")


class Closure(Enum):
    SUBTREE = "subtree"
    ANCESTORS = "ancestors"
    BETWEEN = "between"


class Polarity(Enum):
    MUST = "must"
    MUST_NOT = "must-not"


@dataclass(frozen=True)
class SelectRule:
    rule_id: str
    closure: Closure
    match_kind: NodeKind | None = None
    match_names: frozenset[str] | None = None
    match_opcodes: frozenset[int] | None = None


@dataclass(frozen=True)
class ExpectRule:
    rule_id: str
    trigger_syscalls: frozenset[str]
    polarity: Polarity = Polarity.MUST
    require_commands: frozenset[str] | None = None
    require_kernel: str | None = None


def builtin_expect_rules() -> list[ExpectRule]:
    """Expectations that hold on any fault-free run of the simulator."""
    return [
        ExpectRule(
            rule_id="sync-flush",
            trigger_syscalls=SYNC_SYSCALLS,
            require_commands=FLUSH_COMMANDS,
        ),
        ExpectRule(
            rule_id="blkdev-fsync",
            trigger_syscalls=frozenset({"fsync"}),
            require_kernel="blkdev_fsync",
        ),
        ExpectRule(
            rule_id="fdatasync-journal",
            trigger_syscalls=frozenset({"fdatasync"}),
            require_kernel="jbd2_journal_commit_transaction",
        ),
    ]


def _parse_select(obj: dict[str, Any], where: str) -> SelectRule:
    match = obj.get("match")
    if not isinstance(match, dict) or not match:
        raise RuleError(f"{where}: select rule needs a non-empty 'match' object")
    kind = None
    if "node_kind" in match:
        try:
            kind = NodeKind(match["node_kind"])
        except ValueError:
            raise RuleError(f"{where}: bad node_kind {match['node_kind']!r}") from None
    names = None
    if "names" in match:
        if not isinstance(match["names"], list) or not all(
            isinstance(n, str) for n in match["names"]
        ):
            raise RuleError(f"{where}: 'names' must be a list of strings")
        names = frozenset(match["names"])
    opcodes = None
    if "opcodes" in match:
        if not isinstance(match["opcodes"], list) or not all(
            isinstance(o, int) for o in match["opcodes"]
        ):
            raise RuleError(f"{where}: 'opcodes' must be a list of integers")
        opcodes = frozenset(match["opcodes"])
    unknown = set(match) - {"node_kind", "names", "opcodes"}
    if unknown:
        raise RuleError(f"{where}: unknown match keys {sorted(unknown)}")
    try:
        closure = Closure(obj.get("closure"))
    except ValueError:
        raise RuleError(f"{where}: bad closure {obj.get('closure')!r}") from None
    return SelectRule(
        rule_id=obj["rule_id"],
        closure=closure,
        match_kind=kind,
        match_names=names,
        match_opcodes=opcodes,
    )


def _parse_expect(obj: dict[str, Any], where: str) -> ExpectRule:
    trigger = obj.get("trigger_syscalls")
    if not isinstance(trigger, list) or not trigger or not all(
        isinstance(t, str) for t in trigger
    ):
        raise RuleError(f"{where}: expect rule needs a non-empty 'trigger_syscalls' list")
    require = obj.get("require")
    if not isinstance(require, dict):
        raise RuleError(f"{where}: expect rule needs a 'require' object")
    commands = None
    kernel = None
    if "commands" in require:
        if not isinstance(require["commands"], list) or not require["commands"]:
            raise RuleError(f"{where}: 'require.commands' must be a non-empty list")
        commands = frozenset(require["commands"])
    if "kernel_function" in require:
        if not isinstance(require["kernel_function"], str):
            raise RuleError(f"{where}: 'require.kernel_function' must be a string")
        kernel = require["kernel_function"]
    if (commands is None) == (kernel is None):
        raise RuleError(
            f"{where}: 'require' needs exactly one of 'commands' or 'kernel_function'"
        )
    try:
        polarity = Polarity(obj.get("polarity", "must"))
    except ValueError:
        raise RuleError(f"{where}: bad polarity {obj.get('polarity')!r}") from None
    return ExpectRule(
        rule_id=obj["rule_id"],
        trigger_syscalls=frozenset(trigger),
        polarity=polarity,
        require_commands=commands,
        require_kernel=kernel,
    )


def rule_from_dict(obj: Any, where: str = "<rule>") -> SelectRule | ExpectRule:
    if not isinstance(obj, dict):
        raise RuleError(f"{where}: rule must be a JSON object")
    rule_id = obj.get("rule_id")
    if not isinstance(rule_id, str) or not rule_id:
        raise RuleError(f"{where}: missing or empty 'rule_id'")
    if rule_id in BUILTIN_SELECT_IDS or rule_id in BUILTIN_EXPECT_IDS:
        raise RuleError(f"{where}: rule id {rule_id!r} is built in and not user-overridable")
    kind = obj.get("kind")
    if kind == "select":
        return _parse_select(obj, where)
    if kind == "expect":
        return _parse_expect(obj, where)
    raise RuleError(f"{where}: 'kind' must be 'select' or 'expect', got {kind!r}")


def load_rule_file(path: str | Path) -> list[SelectRule | ExpectRule]:
    """Load one rule object or a list of them from a JSON file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise RuleError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise RuleError(f"{path}: not valid JSON: {exc}") from exc
    items = data if isinstance(data, list) else [data]
    rules = []
    for i, obj in enumerate(items):
        rules.append(rule_from_dict(obj, where=f"{path}[{i}]" if isinstance(data, list) else str(path)))
    ids = [r.rule_id for r in rules]
    if len(set(ids)) != len(ids):
        raise RuleError(f"{path}: duplicate rule ids")
    return rules
