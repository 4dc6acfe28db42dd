"""Per-criterion outcomes collected by the acceptance tests and printed in
the terminal summary."""

VERDICTS: dict[str, tuple[bool, str]] = {}


def record(key, ok: bool, detail: str) -> None:
    key = str(key)
    # a criterion split over several tests passes only if every part does
    if key in VERDICTS:
        prev_ok, prev = VERDICTS[key]
        VERDICTS[key] = (prev_ok and ok, f"{prev}; {detail}")
    else:
        VERDICTS[key] = (bool(ok), detail)
    assert ok, detail
