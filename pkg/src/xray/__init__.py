"""Offline cross-layer diagnosis of storage-stack failures.

Correlates device command logs (SCSI/NVMe) with host kernel traces:
parse both sides, align the clocks, build a correlation tree, prune it
with selection rules, check behavioral expectations, and diff abnormal
runs against references. A deterministic fault-injecting simulator
produces trace/log pairs for the known failure classes.
"""

from .align import ClockOffset, OffsetMethod, apply_offset, estimate_offset
from .devlog import (
    DevLogParseError,
    DevLogRecord,
    build_command,
    decode_dev_log,
    decode_record,
    encode,
    format_dev_log,
    parse_dev_log,
)
from .explorer import (
    BuildError,
    Violation,
    apply_select_rule,
    build_tree,
    check_expectations,
    diff,
    prune,
    prune_rules,
)
from .hosttrace import HostTrace, HostTraceParseError, parse_host_trace
from .model import (
    CommandClass,
    CorrelationTree,
    DeviceCommand,
    DiffEntry,
    DiffReport,
    HostEvent,
    HostEventKind,
    NodeKind,
    Protocol,
    PruneReport,
    Queue,
    TreeNode,
    XrayError,
    load_tree,
    percentage,
    save_tree,
    tree_from_dict,
    tree_to_dict,
    validate_tree,
)
from .rules import (
    ExpectRule,
    RuleError,
    SelectRule,
    builtin_expect_rules,
    load_rule_file,
)
from .sim import (
    GroundTruth,
    ScaleParams,
    SimConfig,
    SimConfigError,
    SimResult,
    WorkloadOp,
    config_from_dict,
    config_from_file,
    generate_random_tree,
    scenario_broken_barrier,
    scenario_isize_update,
    scenario_trim_misdirect,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "BuildError",
    "ClockOffset",
    "CommandClass",
    "CorrelationTree",
    "DevLogParseError",
    "DevLogRecord",
    "DeviceCommand",
    "DiffEntry",
    "DiffReport",
    "ExpectRule",
    "GroundTruth",
    "HostEvent",
    "HostEventKind",
    "HostTrace",
    "HostTraceParseError",
    "NodeKind",
    "OffsetMethod",
    "Protocol",
    "PruneReport",
    "Queue",
    "RuleError",
    "ScaleParams",
    "SelectRule",
    "SimConfig",
    "SimConfigError",
    "SimResult",
    "TreeNode",
    "Violation",
    "WorkloadOp",
    "XrayError",
    "apply_offset",
    "apply_select_rule",
    "build_command",
    "build_tree",
    "builtin_expect_rules",
    "check_expectations",
    "config_from_dict",
    "config_from_file",
    "decode_dev_log",
    "decode_record",
    "diff",
    "encode",
    "estimate_offset",
    "format_dev_log",
    "generate_random_tree",
    "load_rule_file",
    "load_tree",
    "parse_dev_log",
    "parse_host_trace",
    "percentage",
    "prune",
    "prune_rules",
    "save_tree",
    "scenario_broken_barrier",
    "scenario_isize_update",
    "scenario_trim_misdirect",
    "simulate",
    "tree_from_dict",
    "tree_to_dict",
    "validate_tree",
    "__version__",
]
