"""Word frequencies of clinical reports, incorrectly vs correctly predicted recordings."""

import re
from collections import Counter
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from eeg_engine.errors import EmptyInputError
from eeg_engine.models import RecordingLabel, TopWordsReport, TrialResult, WordStats
from utils.logger import get_logger

logger = get_logger(__name__)

# Unicode letters only: digits and underscores split words too
_WORD = re.compile(r"[^\W\d_]+")

DEFAULT_MIN_COUNT = 2


def tokenize(text: Optional[str]) -> List[str]:
    if not text:
        return []
    return _WORD.findall(text.lower())


def _counts(reports: Iterable[Optional[str]]) -> Counter:
    counts: Counter = Counter()
    for report in reports:
        counts.update(tokenize(report))
    return counts


def _sort_key(stats: WordStats) -> Tuple[int, Fraction, str]:
    # infinite ratios first, then descending ratio, then word
    return (0 if stats.infinite else 1, -(stats._exact or Fraction(0)), stats.word)


def word_ratios(reports_incorrect: Sequence[Optional[str]], reports_correct: Sequence[Optional[str]]) -> List[WordStats]:
    """Relative frequency of every word in the incorrect corpus over the correct corpus.

    Frequencies and ratios are exact fractions converted to floats at the end. Words that never
    occur in the correct corpus get ``infinite=True`` and no ratio; they sort first.

    Raises:
        EmptyInputError: a corpus holds no words
    """
    incorrect = _counts(reports_incorrect)
    correct = _counts(reports_correct)
    total_incorrect = sum(incorrect.values())
    total_correct = sum(correct.values())
    if total_incorrect == 0 or total_correct == 0:
        raise EmptyInputError(
            f"Both report corpora need words (incorrect: {total_incorrect}, correct: {total_correct})"
        )

    stats = []
    for word in sorted(set(incorrect) | set(correct)):
        f_minus = Fraction(incorrect[word], total_incorrect)
        f_plus = Fraction(correct[word], total_correct)
        ratio = f_minus / f_plus if f_plus else None
        entry = WordStats(
            word=word,
            count_incorrect=incorrect[word],
            count_correct=correct[word],
            f_minus=float(f_minus),
            f_plus=float(f_plus),
            ratio=None if ratio is None else float(ratio),
            infinite=ratio is None,
        )
        entry._exact = ratio
        stats.append(entry)
    stats.sort(key=_sort_key)
    return stats


def top_words(stats: Sequence[WordStats], k: int = 10, min_count: int = DEFAULT_MIN_COUNT) -> TopWordsReport:
    """The ``k`` largest and ``k`` smallest finite ratios plus every infinite-ratio word.

    ``min_count`` drops words seen fewer times than that over both corpora. Ties are broken
    by the word.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    kept = [s for s in stats if s.count_incorrect + s.count_correct >= min_count]
    finite = [s for s in kept if not s.infinite]
    largest = sorted(finite, key=lambda s: (-s.ratio, s.word))[:k]
    smallest = sorted(finite, key=lambda s: (s.ratio, s.word))[:k]
    infinite = sorted((s for s in kept if s.infinite), key=lambda s: (-s.count_incorrect, s.word))
    return TopWordsReport(largest=largest, smallest=smallest, infinite=infinite)


def class_word_ratios(result: TrialResult, reports: Dict[str, Optional[str]]) -> Dict[str, List[WordStats]]:
    """``word_ratios`` run separately for normal and pathological recordings.

    Args:
        result: Evaluation with per-recording predictions
        reports: Report text by recording id

    Returns:
        dict: class name -> stats; a class without both correct and incorrect reports is omitted
    """
    by_class: Dict[str, List[WordStats]] = {}
    for label in (RecordingLabel.NORMAL, RecordingLabel.PATHOLOGICAL):
        incorrect, correct = [], []
        for rec_id, truth, pred in zip(result.recording_ids, result.true_labels, result.predicted_labels):
            if truth != int(label):
                continue
            (correct if pred == truth else incorrect).append(reports.get(rec_id))
        name = label.name.lower()
        try:
            by_class[name] = word_ratios(incorrect, correct)
        except EmptyInputError as e:
            logger.warning(f"Skipping {name} class word ratios: {e}")
    return by_class


def class_exclusive_words(reports_by_class: Dict[str, Sequence[Optional[str]]], k: int = 10) -> Dict[str, List[Tuple[str, int]]]:
    """Per class, the ``k`` most frequent words that never occur in any other class."""
    counts = {name: _counts(reports) for name, reports in reports_by_class.items()}
    exclusive = {}
    for name, own in counts.items():
        others = set().union(*(set(c) for other, c in counts.items() if other != name))
        words = [(word, n) for word, n in own.items() if word not in others]
        exclusive[name] = sorted(words, key=lambda item: (-item[1], item[0]))[:k]
    return exclusive


def format_ratio(stats: WordStats) -> str:
    return "inf" if stats.infinite else f"{stats.ratio:.4f}"


def write_word_table(stats: Iterable[WordStats], path: str) -> None:
    """Tab-separated ``word count_incorrect count_correct ratio`` rows."""
    lines = ["word\tcount_incorrect\tcount_correct\tratio"]
    for s in stats:
        lines.append(f"{s.word}\t{s.count_incorrect}\t{s.count_correct}\t{format_ratio(s)}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
