import csv
from pathlib import Path
from typing import Iterable

from utgpose.channel import CIR_LENGTH, CirRecord, fmt_real

PUBLIC_DIAG = ["FP_IDX", "FP_AMP1", "FP_AMP2", "FP_AMP3", "STDEV_NOISE", "MAX_NOISE"]
PUBLIC_HEADER = ["NLOS", "RANGE"] + PUBLIC_DIAG + [f"CIR{i}" for i in range(CIR_LENGTH)]


def public_row(rec: CirRecord, blank_diagnostics: bool = False) -> list[str]:
    d = rec.diagnostics
    diag = [str(d.fp_index), *map(fmt_real, d.fp_ampl), fmt_real(d.std_noise), fmt_real(d.max_noise)]
    if blank_diagnostics:
        diag = [""] * len(diag)
    return [str(int(rec.label)), "1.5"] + diag + [fmt_real(m) for m in rec.magnitudes]


def write_public_corpus(path: Path, records: Iterable[CirRecord], blank_every: int = 0) -> int:
    """Write records in the public LOS/NLOS corpus layout; every ``blank_every``-th row
    has its diagnostics cells left empty."""
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PUBLIC_HEADER)
        for rec in records:
            w.writerow(public_row(rec, blank_every > 0 and n % blank_every == 0))
            n += 1
    return n


# --- acceptance summary ----------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def verdict(n: int, ok: bool, detail: str) -> None:
    """Record and print one criterion's outcome, then fail the test if it missed."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
