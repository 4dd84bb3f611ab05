"""Drive scenarios: single runs, model comparison, corpus checking.

A single run executes one scenario under one borrow model. A differential
run executes the same scenario under both models with the same seed and
labels the disagreement, which is the interesting case: a bug one model
rejects and the other tolerates. Corpus mode replays a directory of
annotated scenarios and verifies each outcome against its annotations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .diagnostics import (
    Classification,
    DedupKey,
    Outcome,
    dedup,
    dedup_key_to_dict,
    outcome_key,
    outcome_to_dict,
)
from .ir import OutcomeTag, ScenarioProgram
from .machine import MachineConfig, run_program
from .parser import parse_file


def outcome_tag(outcome: Outcome) -> OutcomeTag:
    """Collapse a run outcome to the tag vocabulary used by annotations."""
    c = outcome.classification
    if c is Classification.BUG:
        kind = outcome.bug_kind
        return OutcomeTag(kind.value) if kind is not None else OutcomeTag.PASS
    if c is Classification.UNSUPPORTED:
        return OutcomeTag.UNSUPPORTED
    if c is Classification.TIMEOUT:
        return OutcomeTag.TIMEOUT
    if outcome.leaks:
        return OutcomeTag.MEMORY_LEAK
    return OutcomeTag.PASS


def exit_code(outcome: Outcome) -> int:
    c = outcome.classification
    if c is Classification.BUG:
        return 1
    if c is Classification.UNSUPPORTED:
        return 2
    if c is Classification.TIMEOUT:
        return 3
    if outcome.leaks:
        return 4
    return 0


def config_to_dict(config: MachineConfig) -> dict:
    """Config as it appears in structured reports; field names are frozen."""
    return {
        "model": config.model,
        "seed": config.seed,
        "steps": config.step_budget,
        "symbolic_alignment": config.symbolic_alignment,
        "strict_provenance": config.strict_provenance,
        "permissive_foreign_loads": config.permissive_foreign,
        "zero_init_foreign": config.zero_init_foreign,
        "unique_as_mutable": config.unique_as_mutable,
    }


def run_single(program: ScenarioProgram, config: MachineConfig) -> Outcome:
    return run_program(program, config)


def single_report(program: ScenarioProgram, config: MachineConfig, outcome: Outcome) -> dict:
    return {
        "scenario": program.path,
        "model": config.model,
        "seed": config.seed,
        "config": config_to_dict(config),
        "outcome": outcome_tag(outcome).value,
        "exit_code": exit_code(outcome),
        "dedup_key": dedup_key_to_dict(outcome_key(outcome)),
        "result": outcome_to_dict(outcome),
    }


@dataclass(frozen=True)
class DifferentialResult:
    tb: Outcome
    sb: Outcome

    @property
    def verdict(self) -> str:
        if self.tb.is_violation == self.sb.is_violation:
            return "agree"
        return "sb-only-violation" if self.sb.is_violation else "tb-only-violation"

    @property
    def exit_code(self) -> int:
        return max(exit_code(self.tb), exit_code(self.sb), key=_severity)


def _severity(code: int) -> int:
    # Violations dominate, then unsupported, timeout, leaks, clean.
    return {0: 0, 4: 1, 3: 2, 2: 3, 1: 4}.get(code, 4)


def run_differential(program: ScenarioProgram, config: MachineConfig) -> DifferentialResult:
    tb = run_program(program, replace(config, model="tb"))
    sb = run_program(program, replace(config, model="sb"))
    return DifferentialResult(tb=tb, sb=sb)


def differential_report(
    program: ScenarioProgram, config: MachineConfig, result: DifferentialResult
) -> dict:
    cfg = config_to_dict(config)
    cfg["model"] = "both"
    return {
        "scenario": program.path,
        "seed": config.seed,
        "config": cfg,
        "verdict": result.verdict,
        "exit_code": result.exit_code,
        "tb": {
            "outcome": outcome_tag(result.tb).value,
            "dedup_key": dedup_key_to_dict(outcome_key(result.tb)),
            "result": outcome_to_dict(result.tb),
        },
        "sb": {
            "outcome": outcome_tag(result.sb).value,
            "dedup_key": dedup_key_to_dict(outcome_key(result.sb)),
            "result": outcome_to_dict(result.sb),
        },
    }


@dataclass(frozen=True)
class CorpusEntry:
    path: str
    model: str
    expected: str
    actual: str

    @property
    def ok(self) -> bool:
        return self.expected == self.actual


@dataclass(frozen=True)
class CorpusResult:
    entries: tuple[CorpusEntry, ...]
    summary_model: str = "tb"
    outcomes: tuple[tuple[str, Outcome], ...] = ()  # one per scenario, summary model

    @property
    def failures(self) -> tuple[CorpusEntry, ...]:
        return tuple(e for e in self.entries if not e.ok)

    @property
    def counts(self) -> dict[str, int]:
        """Scenarios per classification under the summary model; sums to len(outcomes)."""
        out = {c.value: 0 for c in Classification}
        for _, outcome in self.outcomes:
            out[outcome.classification.value] += 1
        return out

    @property
    def dedup_groups(self) -> dict[DedupKey, list[str]]:
        return dedup(self.outcomes)

    @property
    def exit_code(self) -> int:
        return 1 if self.failures else 0


def run_corpus(paths: list[str], config: MachineConfig) -> CorpusResult:
    """Check every scenario against its annotations.

    A scenario is checked under each model it declares an expectation for.
    One with no annotations at all is expected to run clean under both
    models; that makes an unannotated file a regression tripwire rather
    than a silent skip. Summary counts and dedup groups come from one run
    per scenario under the configured model.
    """
    entries: list[CorpusEntry] = []
    outcomes: list[tuple[str, Outcome]] = []
    memo: dict[tuple[str, str], Outcome] = {}

    def run(path: str, program: ScenarioProgram, model: str) -> Outcome:
        key = (path, model)
        if key not in memo:
            memo[key] = run_program(program, replace(config, model=model))
        return memo[key]

    for path in sorted(paths):
        program = parse_file(path)
        for model in ("tb", "sb"):
            expected = program.expectation_for(model)
            if expected is None:
                if program.expectations:
                    continue
                expected = OutcomeTag.PASS
            outcome = run(path, program, model)
            entries.append(
                CorpusEntry(
                    path=path,
                    model=model,
                    expected=expected.value,
                    actual=outcome_tag(outcome).value,
                )
            )
        outcomes.append((path, run(path, program, config.model)))
    return CorpusResult(
        entries=tuple(entries), summary_model=config.model, outcomes=tuple(outcomes)
    )


def corpus_report(result: CorpusResult) -> dict:
    return {
        "checks": [
            {
                "scenario": e.path,
                "model": e.model,
                "expected": e.expected,
                "actual": e.actual,
                "ok": e.ok,
            }
            for e in result.entries
        ],
        "summary": {
            "model": result.summary_model,
            "counts": result.counts,
            "dedup_groups": [
                {"key": dedup_key_to_dict(k), "scenarios": paths}
                for k, paths in result.dedup_groups.items()
            ],
        },
        "total": len(result.entries),
        "mismatches": len(result.failures),
        "exit_code": result.exit_code,
    }
