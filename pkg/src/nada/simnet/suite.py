"""The standard attack suite: every adversary kind against every boundary-crossing message type.

Targets come from a clean run of the same scenario: for each message type the
suite attacks the first occurrence that crosses a trust boundary. Repudiation
is additionally exercised post hoc against the first node's log chain.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

from .adversary import LOG_CHAIN, LOG_MODES, AdversaryAction, Kind
from .scenario import ScenarioConfig, run_scenario

ABLATION_TARGETS = ("M3", "M5", "M10", "M11")
LOG_KINDS = {"mutate": Kind.TAMPER, "reorder": Kind.TAMPER, "duplicate": Kind.REPLAY}


def boundary_targets(config: ScenarioConfig, seed: int | None = None) -> dict[str, int]:
    """Message type -> index of its first boundary-crossing delivery in a clean run."""
    clean = run_scenario(config.with_adversary(()), seed)
    counts: dict[str, int] = {}
    first: dict[str, int] = {}
    for r in clean.trace:
        if r["kind"] != "msg" or "injected" in r:
            continue
        n = counts.get(r["type"], 0)
        counts[r["type"]] = n + 1
        if r["boundary_crossed"] and r["type"] not in first:
            first[r["type"]] = n
    return dict(sorted(first.items()))


def standard_actions(config: ScenarioConfig, seed: int | None = None, log_index: int = 3) -> list[AdversaryAction]:
    actions = [AdversaryAction(kind, mtype, n)
               for mtype, n in boundary_targets(config, seed).items() for kind in Kind]
    actions += [AdversaryAction(LOG_KINDS[mode], LOG_CHAIN, log_index, mode=mode) for mode in LOG_MODES]
    return actions


def _run_one(args: tuple[ScenarioConfig, int | None, AdversaryAction]) -> dict[str, Any]:
    config, seed, action = args
    result = run_scenario(config.with_adversary([action]), seed)
    return result.report["attacks"][0]


@dataclass
class SuiteResult:
    disabled: tuple[str, ...]
    outcomes: list[dict[str, Any]] = field(default_factory=list)

    @property
    def blocked(self) -> list[dict[str, Any]]:
        return [o for o in self.outcomes if o["verdict"] == "Blocked"]

    @property
    def succeeded(self) -> list[dict[str, Any]]:
        return [o for o in self.outcomes if o["verdict"] == "Succeeded"]

    @property
    def all_blocked(self) -> bool:
        return len(self.blocked) == len(self.outcomes)

    def mitigations(self) -> set[str]:
        return {o["mitigation"] for o in self.blocked if o["mitigation"]}

    def to_dict(self) -> dict[str, Any]:
        return {"disabled": list(self.disabled), "total": len(self.outcomes), "blocked": len(self.blocked),
                "succeeded": [o["action"] for o in self.succeeded], "outcomes": self.outcomes}


def run_suite(config: ScenarioConfig, seed: int | None = None, *, disabled: tuple[str, ...] = (),
              actions: list[AdversaryAction] | None = None, workers: int = 1) -> SuiteResult:
    base = config.with_disabled(set(disabled))
    if actions is None:
        actions = standard_actions(config.with_disabled(set()), seed)
    jobs = [(base, seed, a) for a in actions]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, jobs, chunksize=8))
    else:
        outcomes = [_run_one(j) for j in jobs]
    return SuiteResult(tuple(disabled), outcomes)


def ablation_sweep(config: ScenarioConfig, seed: int | None = None, targets: tuple[str, ...] = ABLATION_TARGETS,
                   workers: int = 1) -> dict[str, SuiteResult]:
    actions = standard_actions(config, seed)
    return {m: run_suite(config, seed, disabled=(m,), actions=actions, workers=workers) for m in targets}
