"""quietlist: allow lists of infrequently visited yet trustworthy domains.

The pipeline crawls seed URLs and DNS weekly, labels domains whose
observations changed suspiciously between consecutive iterations, trains a
positive-unlabeled classifier on those labels, and emits the remaining
low-risk domains as an allow list with full accounting.
"""

__version__ = "0.1.0"

from .pld import PayLevelDomain, SuffixRuleSet, extract_pld, normalize_entry

__all__ = [
    "PayLevelDomain",
    "SuffixRuleSet",
    "extract_pld",
    "normalize_entry",
    "__version__",
]
