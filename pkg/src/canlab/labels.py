"""Ground-truth / verdict label taxonomy shared across injection, logging and IDS."""

BENIGN = "benign"
DOS = "dos"
FUZZ = "fuzz"
SPOOF = "spoof"
UNKNOWN = "unknown"

# Classifier output order; also the confusion-matrix row/column order.
CLASSES = (BENIGN, DOS, FUZZ, SPOOF)

ATTACK_LABELS = (DOS, FUZZ, SPOOF)


def class_index(label: str) -> int:
    return CLASSES.index(label)
