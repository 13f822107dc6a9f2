"""Token accounting.

The rule is deliberately simple and adapter-independent: one token per four
bytes of UTF-8, rounded up. Deterministic counting makes every threshold in
the runtime exactly testable.
"""


def count_tokens(text: str) -> int:
    """ceil(byte_length / 4); empty text counts zero."""
    n = len(text.encode("utf-8"))
    return -(-n // 4)
