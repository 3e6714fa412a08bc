"""QA scoring: answer normalization, EM / token-F1 / containment accuracy,
and run-level reports with iteration-behavior statistics.

Normalization follows the SQuAD-style convention (lowercase, drop the
articles a/an/the, strip punctuation, collapse whitespace); every metric and
the synthesis filter share it, so it affects every reported number.
"""

from __future__ import annotations

import csv
import json
import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

from .model import Termination, Trajectory

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class MissingGolden(ValueError):
    """A trajectory's question carries no golden answers."""


def normalize_answer(text: str) -> str:
    """Lowercase, remove whole-word articles, strip punctuation, collapse
    whitespace."""
    text = text.lower()
    text = _ARTICLE_RE.sub(" ", text)
    text = text.translate(_PUNCT_TABLE)
    return " ".join(text.split())


def exact_match(predicted: str, golden: Sequence[str]) -> int:
    """1 iff the normalized prediction equals any normalized golden alias."""
    pred = normalize_answer(predicted)
    return int(any(pred == normalize_answer(g) for g in golden))


def f1_score(predicted: str, golden: Sequence[str]) -> float:
    """Token-level F1, best over golden aliases.

    Precision/recall are computed over normalized-token multisets. When both
    sides normalize to empty the score is 1.0; when only one side is empty it
    is 0.0.
    """
    return max(_f1_single(predicted, g) for g in golden)


def _f1_single(predicted: str, golden: str) -> float:
    pred_tokens = normalize_answer(predicted).split()
    gold_tokens = normalize_answer(golden).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def accuracy_contains(predicted: str, golden: Sequence[str]) -> int:
    """1 iff any normalized golden alias occurs as a substring of the
    normalized prediction."""
    pred = normalize_answer(predicted)
    return int(any(normalize_answer(g) in pred for g in golden))


@dataclass(frozen=True)
class EvalReport:
    """Per-question scores plus run aggregates and the iteration histogram."""

    metric: str
    per_question: tuple[dict, ...]
    aggregates: dict
    iteration_histogram: dict
    config_digest: str

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "config_digest": self.config_digest,
            "aggregates": self.aggregates,
            "iteration_histogram": {str(k): v for k, v in sorted(self.iteration_histogram.items())},
            "per_question": list(self.per_question),
        }


METRIC_NAMES = ("em", "f1", "accuracy")


def evaluate_run(
    trajectories: Sequence[Trajectory],
    metric: str = "em",
    config_digest: str = "",
) -> EvalReport:
    """Score a set of trajectories against their embedded golden answers.

    Trajectories without a final answer score 0 on every metric and are
    counted in the iteration histogram under their step count.
    """
    if metric not in METRIC_NAMES:
        raise ValueError(f"metric must be one of {METRIC_NAMES}, got {metric!r}")
    if not trajectories:
        raise ValueError("no trajectories to evaluate")

    per_question = []
    histogram: Counter = Counter()
    for traj in trajectories:
        golden = traj.question.golden_answers
        if not golden:
            raise MissingGolden(f"question {traj.question.id!r} has no golden answers")
        answer = traj.final_answer
        if answer is None:
            em, f1, acc = 0, 0.0, 0
        else:
            em = exact_match(answer, golden)
            f1 = _round(f1_score(answer, golden))
            acc = accuracy_contains(answer, golden)
        iterations = len(traj.steps)
        histogram[iterations] += 1
        per_question.append(
            {
                "id": traj.question.id,
                "em": em,
                "f1": f1,
                "accuracy": acc,
                "iteration_count": iterations,
                "termination": traj.termination.value,
            }
        )

    n = len(per_question)
    aggregates = {
        "em": _round(sum(row["em"] for row in per_question) / n),
        "f1": _round(sum(row["f1"] for row in per_question) / n),
        "accuracy": _round(sum(row["accuracy"] for row in per_question) / n),
        "mean_iterations": _round(sum(row["iteration_count"] for row in per_question) / n),
    }
    frequencies = {count: _round(freq / n) for count, freq in sorted(histogram.items())}
    return EvalReport(
        metric=metric,
        per_question=tuple(per_question),
        aggregates=aggregates,
        iteration_histogram=frequencies,
        config_digest=config_digest,
    )


def _round(value: float) -> float:
    # Canonical float form keeps report files byte-stable across platforms.
    return float(f"{value:.12g}")


def write_report_json(report: EvalReport, fp: IO[str]) -> None:
    json.dump(report.to_dict(), fp, indent=2, ensure_ascii=False)
    fp.write("\n")


def write_report_table(report: EvalReport, fp: IO[str]) -> None:
    """Aligned plain-text rendering of the report for humans."""
    headers = ["id", "em", "f1", "accuracy", "iters", "termination"]
    rows = [
        [
            row["id"],
            str(row["em"]),
            f"{row['f1']:.4f}",
            str(row["accuracy"]),
            str(row["iteration_count"]),
            row["termination"],
        ]
        for row in report.per_question
    ]
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    fp.write(fmt.format(*headers).rstrip() + "\n")
    fp.write(fmt.format(*("-" * w for w in widths)).rstrip() + "\n")
    for r in rows:
        fp.write(fmt.format(*r).rstrip() + "\n")
    agg = report.aggregates
    fp.write("\n")
    fp.write(f"metric={report.metric}  config_digest={report.config_digest}\n")
    fp.write(
        "em={em:.4f}  f1={f1:.4f}  accuracy={accuracy:.4f}  mean_iterations={mean_iterations:.4f}\n".format(**agg)
    )


def write_histogram_csv(histogram: dict, fp: IO[str]) -> None:
    """Iteration histogram as delimited output, one row per iteration count."""
    writer = csv.writer(fp)
    writer.writerow(["iterations", "frequency"])
    for count in sorted(histogram):
        writer.writerow([count, histogram[count]])


def read_trajectory_histogram(trajectories: Iterable[Trajectory]) -> dict:
    counts: Counter = Counter(len(t.steps) for t in trajectories)
    total = sum(counts.values())
    return {k: counts[k] / total for k in sorted(counts)} if total else {}


def termination_counts(trajectories: Iterable[Trajectory]) -> dict:
    counts: Counter = Counter(t.termination.value for t in trajectories)
    return {name.value: counts.get(name.value, 0) for name in Termination}
