"""Closed taxonomy of influencing factors behind annotation errors."""

FACTOR_CLASSES = (
    "Ambiguous Abbreviations and Acronyms",
    "Generic or Vague Descriptors",
    "Chromosomal and Genomic Anomaly Terms",
    "Descriptive or Phenotypic Features",
    "Incomplete or Non-Specific Genetic/Pathological Descriptions",
    "Miscellaneous or Low-Frequency Terms",
)

UNCLASSIFIED = "unclassified"

ALL_FACTORS = FACTOR_CLASSES + (UNCLASSIFIED,)


def normalize_factor(raw: str) -> str:
    """Map moderator output onto the closed taxonomy; unknown -> unclassified."""
    cleaned = " ".join(raw.split())
    for name in FACTOR_CLASSES:
        if cleaned.lower() == name.lower():
            return name
    return UNCLASSIFIED
