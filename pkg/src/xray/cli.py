"""The ``xray`` command line: offline storage-stack failure diagnosis.

Subcommands cover the pipeline end to end: ``simulate`` emits a host
trace and device log pair, ``parse-host``/``parse-dev`` inspect the raw
inputs, ``align`` estimates the device clock offset, ``build`` produces
a correlation tree, ``prune``/``check``/``diff``/``report`` analyze it,
and ``export`` re-renders a saved tree.

Exit codes: 0 success, 1 usage error, 2 input parse or validation error,
3 expectation violations found (``check`` only). Diagnostics go to
stderr; set ``XRAY_LOG=off|warn|debug`` to tune verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .align import apply_offset, estimate_offset
from .devlog import decode_dev_log
from .dot import tree_to_dot
from .explorer import build_tree, check_expectations, diff, prune_rules
from .hosttrace import HostTrace, parse_host_trace
from .model import (
    CorrelationTree,
    DeviceCommand,
    XrayError,
    command_to_dict,
    load_tree,
    tree_to_dict,
    validate_tree,
)
from .plotting import save_rule_summary_figure
from .report import (
    render_diff_text,
    render_prune_text,
    render_summary_text,
    render_tree_text,
    render_violations_text,
    summarize_tree,
)
from .rules import (
    BUILTIN_SELECT_IDS,
    ExpectRule,
    RuleError,
    SelectRule,
    builtin_expect_rules,
    load_rule_file,
)
from .sim import (
    Protocol,
    config_from_file,
    scenario_broken_barrier,
    scenario_isize_update,
    scenario_trim_misdirect,
    simulate,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VIOLATIONS = 3

log = logging.getLogger("xray")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse normally exits with status 2 on bad arguments; we reserve 2
    for input data errors, so usage problems are rerouted to exit code 1."""

    def error(self, message: str) -> "NoReturn":  # type: ignore[name-defined]  # noqa: F821
        raise _UsageError(message)


def _setup_logging() -> None:
    level_name = os.environ.get("XRAY_LOG", "warn").strip().lower()
    if level_name == "off":
        logging.disable(logging.CRITICAL)
        return
    logging.disable(logging.NOTSET)
    level = {"warn": logging.WARNING, "debug": logging.DEBUG}.get(level_name, logging.WARNING)
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="xray: %(levelname)s: %(message)s",
        force=True,
    )


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise XrayError(f"{path}: {exc}") from exc


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _emit_json(payload: Any, out: str | None) -> None:
    _emit(json.dumps(payload, indent=2) + "\n", out)


def _parse_host_file(path: str) -> HostTrace:
    host = parse_host_trace(_read_text(path), source=path)
    for warning in host.warnings:
        log.warning("%s", warning)
    return host


def _parse_dev_file(path: str) -> list[DeviceCommand]:
    return decode_dev_log(_read_text(path), source=path)


def _load_tree_file(path: str) -> CorrelationTree:
    return load_tree(path)


def _resolve_select_rules(
    rule_ids: list[str] | None, rules_path: str | None
) -> list[str | SelectRule]:
    """Turn --rule ids into built-in ids or user rules from the --rules file."""
    user: dict[str, SelectRule] = {}
    if rules_path:
        for rule in load_rule_file(rules_path):
            if isinstance(rule, SelectRule):
                user[rule.rule_id] = rule
    if not rule_ids:
        return list(BUILTIN_SELECT_IDS) + list(user.values())
    resolved: list[str | SelectRule] = []
    for rid in rule_ids:
        if rid in BUILTIN_SELECT_IDS:
            resolved.append(rid)
        elif rid in user:
            resolved.append(user[rid])
        else:
            known = ", ".join(BUILTIN_SELECT_IDS)
            hint = "no --rules file was given" if not rules_path else (
                f"not defined in {rules_path}"
            )
            raise RuleError(f"unknown rule id {rid!r}; built-ins are {known} and {hint}")
    return resolved


_SCENARIOS = {
    "broken-barrier": scenario_broken_barrier,
    "isize-update": scenario_isize_update,
    "trim-misdirect": scenario_trim_misdirect,
}


def _cmd_simulate(args: argparse.Namespace) -> int:
    if (args.config is None) == (args.scenario is None):
        raise _UsageError("simulate needs exactly one of --config or --scenario")
    if args.config is not None:
        config = config_from_file(args.config)
    else:
        kwargs: dict[str, Any] = {
            "protocol": Protocol(args.protocol),
            "faulty": not args.fault_free,
        }
        if args.seed is not None:
            kwargs["seed"] = args.seed
        config = _SCENARIOS[args.scenario](**kwargs)
    result = simulate(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    host_path = out_dir / "host.trace"
    dev_path = out_dir / "dev.log"
    gt_path = out_dir / "ground_truth.json"
    host_path.write_text(result.host_text)
    dev_path.write_text(result.dev_text)
    gt_path.write_text(json.dumps(result.ground_truth.to_dict(), indent=2) + "\n")
    sys.stdout.write(f"wrote {host_path}\nwrote {dev_path}\nwrote {gt_path}\n")
    return EXIT_OK


def _cmd_parse_host(args: argparse.Namespace) -> int:
    host = _parse_host_file(args.host)
    if args.format == "json":
        payload = [
            {"kind": ev.kind.value, "name": ev.name, "ts": ev.ts, "depth": ev.depth}
            for ev in host.events
        ]
        _emit_json(payload, args.out)
    else:
        lines = ["kind\tname\tts\tdepth"]
        lines += [f"{ev.kind.value}\t{ev.name}\t{ev.ts}\t{ev.depth}" for ev in host.events]
        _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _cmd_parse_dev(args: argparse.Namespace) -> int:
    cmds = _parse_dev_file(args.dev)
    if args.format == "json":
        _emit_json([command_to_dict(c) for c in cmds], args.out)
    else:
        lines = ["ts\tprotocol\tname\tclass\tdetails"]
        for cmd in cmds:
            details = ",".join(f"{k}={v}" for k, v in sorted(cmd.decoded.items())) or "-"
            lines.append(
                f"{cmd.ts}\t{cmd.protocol.value}\t{cmd.name}\t{cmd.cmd_class.value}\t{details}"
            )
        _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _cmd_align(args: argparse.Namespace) -> int:
    host = _parse_host_file(args.host)
    cmds = _parse_dev_file(args.dev)
    offset = estimate_offset(host.events, cmds)
    if args.format == "json":
        _emit_json(offset.to_dict(), args.out)
    else:
        _emit(
            "metric\tvalue\n"
            f"offset_ns\t{offset.offset_ns}\n"
            f"method\t{offset.method.value}\n"
            f"residual_violations\t{offset.residual_violations}\n",
            args.out,
        )
    return EXIT_OK


def _render_tree(tree: CorrelationTree, fmt: str, highlight: frozenset[int] | None = None) -> str:
    if fmt == "json":
        return json.dumps(tree_to_dict(tree), indent=2) + "\n"
    if fmt == "dot":
        return tree_to_dot(tree, highlight=highlight)
    return render_tree_text(tree)


def _cmd_build(args: argparse.Namespace) -> int:
    if args.offset_ns is not None and args.estimate_offset:
        raise _UsageError("--offset-ns and --estimate-offset are mutually exclusive")
    host = _parse_host_file(args.host)
    cmds = _parse_dev_file(args.dev)
    offset_info: dict[str, Any] | None = None
    if args.estimate_offset:
        offset = estimate_offset(host.events, cmds)
        log.debug("estimated offset %d ns (%d residual violations)",
                  offset.offset_ns, offset.residual_violations)
        cmds = apply_offset(cmds, offset)
        offset_info = offset.to_dict()
    elif args.offset_ns is not None:
        cmds = apply_offset(cmds, args.offset_ns)
        offset_info = {"offset_ns": args.offset_ns, "method": "configured"}
    meta = {
        "host_source": str(args.host),
        "dev_source": str(args.dev),
        "offset": offset_info,
    }
    tree = build_tree(host.events, cmds, meta=meta)
    problems = validate_tree(tree)
    if problems:
        for problem in problems:
            sys.stderr.write(f"xray: invalid tree: {problem}\n")
        return EXIT_DATA
    _emit(_render_tree(tree, args.format), args.out)
    return EXIT_OK


def _cmd_prune(args: argparse.Namespace) -> int:
    tree = _load_tree_file(args.tree)
    resolved = _resolve_select_rules(args.rule, args.rules)
    report = prune_rules(tree, resolved)
    for warning in report.warnings:
        log.warning("%s", warning)
    if args.format == "dot":
        if len(report.selected) != 1:
            raise _UsageError("--format dot needs exactly one --rule to highlight")
        (selection,) = report.selected.values()
        _emit(tree_to_dot(tree, highlight=selection), args.out)
    elif args.format == "json":
        _emit_json(report.to_dict(), args.out)
    else:
        _emit(render_prune_text(report), args.out)
    return EXIT_OK


def _cmd_check(args: argparse.Namespace) -> int:
    tree = _load_tree_file(args.tree)
    if args.rules:
        rules = [r for r in load_rule_file(args.rules) if isinstance(r, ExpectRule)]
        if not rules:
            raise XrayError(f"{args.rules}: no expectation rules found")
    else:
        rules = builtin_expect_rules()
    violations = check_expectations(tree, rules)
    if args.format == "json":
        _emit_json({"violations": [v.to_dict() for v in violations]}, args.out)
    else:
        _emit(render_violations_text(violations), args.out)
    return EXIT_VIOLATIONS if violations else EXIT_OK


def _cmd_diff(args: argparse.Namespace) -> int:
    abnormal = _load_tree_file(args.abnormal)
    reference = _load_tree_file(args.reference)
    result = diff(abnormal, reference)
    if args.format == "json":
        _emit_json(result.to_dict(), args.out)
    else:
        _emit(render_diff_text(result), args.out)
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    tree = _load_tree_file(args.tree)
    summary = summarize_tree(tree)
    prune_report = None
    if not args.counts or args.fig:
        rules = _resolve_select_rules(None, args.rules)
        prune_report = prune_rules(tree, rules)
        for warning in prune_report.warnings:
            log.warning("%s", warning)
    fig_path: str | None = None
    if args.fig:
        assert prune_report is not None
        fig_path = str(save_rule_summary_figure(prune_report, args.fig))
    if args.format == "json":
        payload: dict[str, Any] = {"summary": summary}
        if not args.counts and prune_report is not None:
            payload["prune"] = prune_report.to_dict()
        if fig_path:
            payload["figure"] = fig_path
        _emit_json(payload, args.out)
    else:
        text = render_summary_text(summary)
        if not args.counts and prune_report is not None:
            text += "\n" + render_prune_text(prune_report)
        if fig_path:
            text += f"\nfigure\t{fig_path}\n"
        _emit(text, args.out)
    return EXIT_OK


def _cmd_export(args: argparse.Namespace) -> int:
    tree = _load_tree_file(args.tree)
    highlight: frozenset[int] | None = None
    if args.rule:
        report = prune_rules(tree, _resolve_select_rules([args.rule], args.rules))
        highlight = report.selected[args.rule]
    _emit(_render_tree(tree, args.format, highlight=highlight), args.out)
    return EXIT_OK


def _add_out(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", help="write to this file instead of stdout")


def _add_format(
    parser: argparse.ArgumentParser, choices: Sequence[str], default: str = "text"
) -> None:
    parser.add_argument("--format", choices=list(choices), default=default,
                        help=f"output format (default: {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="xray",
        description="Offline cross-layer diagnosis of storage-stack failures: "
        "correlate device command logs with host kernel traces.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a host trace / device log pair")
    p.add_argument("--config", help="simulation config JSON file")
    p.add_argument("--scenario", choices=sorted(_SCENARIOS),
                   help="built-in scenario instead of --config")
    p.add_argument("--fault-free", action="store_true",
                   help="run the scenario without its fault (reference run)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--protocol", choices=[pr.value for pr in Protocol], default="SCSI")
    p.add_argument("--out-dir", required=True, help="directory for host.trace/dev.log/ground_truth.json")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("parse-host", help="parse a host kernel trace")
    p.add_argument("--host", required=True)
    _add_format(p, ("text", "json"))
    _add_out(p)
    p.set_defaults(func=_cmd_parse_host)

    p = sub.add_parser("parse-dev", help="parse and decode a device command log")
    p.add_argument("--dev", required=True)
    _add_format(p, ("text", "json"))
    _add_out(p)
    p.set_defaults(func=_cmd_parse_dev)

    p = sub.add_parser("align", help="estimate the device-to-host clock offset")
    p.add_argument("--host", required=True)
    p.add_argument("--dev", required=True)
    _add_format(p, ("text", "json"))
    _add_out(p)
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("build", help="build a correlation tree from a trace/log pair")
    p.add_argument("--host", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--offset-ns", type=int,
                   help="apply this fixed offset to device timestamps")
    p.add_argument("--estimate-offset", action="store_true",
                   help="estimate and apply the offset before building")
    _add_format(p, ("text", "json", "dot"), default="json")
    _add_out(p)
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("prune", help="apply selection rules to a saved tree")
    p.add_argument("--tree", required=True, help="tree JSON file (from build --format json)")
    p.add_argument("--rule", action="append",
                   help="rule id to apply; repeatable (default: rule1 rule2 rule3)")
    p.add_argument("--rules", help="JSON file with user-defined rules")
    _add_format(p, ("text", "json", "dot"))
    _add_out(p)
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser("check", help="check expectation rules; exit 3 on violations")
    p.add_argument("--tree", required=True)
    p.add_argument("--rules",
                   help="JSON file of expectation rules (replaces the built-in set)")
    _add_format(p, ("text", "json"))
    _add_out(p)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("diff", help="diff an abnormal tree against a reference tree")
    p.add_argument("--abnormal", required=True)
    p.add_argument("--reference", required=True)
    _add_format(p, ("text", "json"))
    _add_out(p)
    p.set_defaults(func=_cmd_diff)

    p = sub.add_parser("report", help="summarize a tree and its rule selections")
    p.add_argument("--tree", required=True)
    p.add_argument("--rules", help="JSON file with user-defined rules")
    p.add_argument("--counts", action="store_true", help="only emit the counts summary")
    p.add_argument("--fig", help="also render a bar chart of rule selections to this file")
    _add_format(p, ("text", "json"))
    _add_out(p)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("export", help="re-render a saved tree (text, JSON, or DOT)")
    p.add_argument("--tree", required=True)
    p.add_argument("--rule", help="highlight this rule's selection (dot format)")
    p.add_argument("--rules", help="JSON file with user-defined rules")
    _add_format(p, ("text", "json", "dot"), default="json")
    _add_out(p)
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        sys.stderr.write(f"xray: error: {exc}\n")
        return EXIT_USAGE
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as exc:
        sys.stderr.write(f"xray: error: {exc}\n")
        return EXIT_USAGE
    except XrayError as exc:
        sys.stderr.write(f"xray: error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
