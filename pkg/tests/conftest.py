"""Shared fixtures: full parse-align-build pipelines over simulated runs."""

from __future__ import annotations

from dataclasses import dataclass

import pytest

from xray.align import ClockOffset, apply_offset, estimate_offset
from xray.devlog import decode_dev_log
from xray.explorer import build_tree
from xray.hosttrace import HostTrace, parse_host_trace
from xray.model import CorrelationTree, DeviceCommand, validate_tree
from xray.sim import (
    SimConfig,
    SimResult,
    scenario_broken_barrier,
    scenario_isize_update,
    simulate,
)


@dataclass
class PipelineRun:
    """One simulated run carried through the whole diagnosis pipeline."""

    config: SimConfig
    result: SimResult
    host: HostTrace
    raw_cmds: list[DeviceCommand]
    offset: ClockOffset
    cmds: list[DeviceCommand]
    tree: CorrelationTree


def run_pipeline(config: SimConfig) -> PipelineRun:
    """simulate -> parse both sides -> estimate/apply offset -> build tree."""
    result = simulate(config)
    host = parse_host_trace(result.host_text, source="<sim-host>")
    raw_cmds = decode_dev_log(result.dev_text, source="<sim-dev>")
    offset = estimate_offset(host.events, raw_cmds)
    cmds = apply_offset(raw_cmds, offset)
    tree = build_tree(host.events, cmds)
    problems = validate_tree(tree)
    assert problems == [], f"pipeline produced an invalid tree: {problems[:5]}"
    return PipelineRun(
        config=config,
        result=result,
        host=host,
        raw_cmds=raw_cmds,
        offset=offset,
        cmds=cmds,
        tree=tree,
    )


@pytest.fixture(scope="session")
def barrier_abnormal() -> PipelineRun:
    return run_pipeline(scenario_broken_barrier(faulty=True))


@pytest.fixture(scope="session")
def barrier_reference() -> PipelineRun:
    return run_pipeline(scenario_broken_barrier(faulty=False))


@pytest.fixture(scope="session")
def isize_abnormal() -> PipelineRun:
    return run_pipeline(scenario_isize_update(faulty=True))


@pytest.fixture(scope="session")
def isize_reference() -> PipelineRun:
    return run_pipeline(scenario_isize_update(faulty=False))
