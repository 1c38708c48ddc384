"""Collects acceptance outcomes so they can be printed as a summary."""
RESULTS: dict[int, tuple[str, bool, str, float]] = {}


def record(n: int, title: str, ok: bool, msg: str, seconds: float) -> None:
    RESULTS[n] = (title, ok, msg, seconds)
    print(f"\n{format_line(n)}", flush=True)


def format_line(n: int) -> str:
    title, ok, msg, seconds = RESULTS[n]
    return f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}  [{seconds:.1f}s] {msg}"
