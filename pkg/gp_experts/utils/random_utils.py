import numpy as np

# Fixed labels for the sub-streams derived from one replication seed.
STREAM_LABELS = {
    "design": 0,
    "noise": 1,
    "chain": 2,
    "predict": 3,
}


def derive_rng(seed: int, label: str) -> np.random.Generator:
    """
    Generator for one labelled sub-stream of a master seed. The same
    (seed, label) pair always yields the same stream, independently of
    which other streams were drawn.
    """
    if label not in STREAM_LABELS:
        raise KeyError(f"Unknown random stream label: {label}")
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAM_LABELS[label],))
    return np.random.default_rng(sequence)


def parse_seed_range(text: str) -> list:
    """Parse 'A..B' (inclusive), 'A,B,C' or a single integer."""
    text = text.strip()
    if ".." in text:
        start, end = text.split("..", 1)
        start, end = int(start), int(end)
        if end < start:
            raise ValueError(f"Empty seed range: {text}")
        return list(range(start, end + 1))
    return [int(part) for part in text.split(",") if part.strip()]
